/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_heatmap: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
export const demo_kept: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const demo_last_macs: (a: number) => number;
export const demo_new: (a: number, b: bigint) => [number, number, number];
export const demo_objects: (a: number) => [number, number];
export const demo_scatter_labels: (a: number, b: number, c: bigint) => [number, number, number, number];
export const demo_scatter_points: (a: number, b: number, c: bigint) => [number, number, number, number];
export const demo_scores: (a: number, b: number, c: number) => [number, number, number, number];
export const demo_side: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
