/* tslint:disable */
/* eslint-disable */

/**
 * Handle exported to JavaScript.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    heatmap(metric: string, strategy: string, keep: number, head_agg: string): Float64Array;
    kept(metric: string, strategy: string, keep: number): Uint8Array;
    /**
     * Multiply-accumulate count of the most recent `heatmap` call.
     */
    last_macs(): number;
    constructor(side: number, seed: bigint);
    objects(): Int32Array;
    scatter_labels(k: number, seed: bigint): Uint32Array;
    scatter_points(k: number, seed: bigint): Float64Array;
    scores(metric: string): Float64Array;
    side(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_heatmap: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly demo_kept: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly demo_last_macs: (a: number) => number;
    readonly demo_new: (a: number, b: bigint) => [number, number, number];
    readonly demo_objects: (a: number) => [number, number];
    readonly demo_scatter_labels: (a: number, b: number, c: bigint) => [number, number, number, number];
    readonly demo_scatter_points: (a: number, b: number, c: bigint) => [number, number, number, number];
    readonly demo_scores: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_side: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
