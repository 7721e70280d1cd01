import init, { Demo } from "./pkg/simignore_web.js";

const $ = (id) => document.getElementById(id);
const PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939"];

let demo = null;

function grey(v) {
  const g = Math.round(255 * (1 - v));
  return `rgb(${g},${g},${g})`;
}

function heat(v) {
  // black -> red -> yellow
  const r = Math.round(255 * Math.min(1, 2 * v));
  const g = Math.round(255 * Math.max(0, 2 * v - 1));
  return `rgb(${r},${g},0)`;
}

function drawGrid(canvas, side, values, colour, kept) {
  const ctx = canvas.getContext("2d");
  const cell = canvas.width / side;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  for (let i = 0; i < side * side; i++) {
    const x = (i % side) * cell, y = Math.floor(i / side) * cell;
    ctx.fillStyle = colour(values[i]);
    ctx.fillRect(x, y, cell, cell);
    if (kept && !kept[i]) {
      ctx.strokeStyle = "rgba(0,0,0,0.6)";
      ctx.beginPath();
      ctx.moveTo(x + 2, y + 2); ctx.lineTo(x + cell - 2, y + cell - 2);
      ctx.moveTo(x + cell - 2, y + 2); ctx.lineTo(x + 2, y + cell - 2);
      ctx.stroke();
    }
  }
}

function scaled(values) {
  let lo = Infinity, hi = -Infinity;
  for (const v of values) { lo = Math.min(lo, v); hi = Math.max(hi, v); }
  const span = hi > lo ? hi - lo : 1;
  return Array.from(values, (v) => (v - lo) / span);
}

function drawScatter(canvas, pts, labels, kept) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const xs = [], ys = [];
  for (let i = 0; i < pts.length; i += 2) { xs.push(pts[i]); ys.push(pts[i + 1]); }
  const sx = scaled(xs), sy = scaled(ys);
  const pad = 10, w = canvas.width - 2 * pad, h = canvas.height - 2 * pad;
  for (let i = 0; i < labels.length; i++) {
    const x = pad + sx[i] * w, y = pad + (1 - sy[i]) * h;
    ctx.beginPath();
    ctx.arc(x, y, 3, 0, 2 * Math.PI);
    const c = PALETTE[labels[i] % PALETTE.length];
    if (kept[i]) { ctx.fillStyle = c; ctx.fill(); } else { ctx.strokeStyle = c; ctx.stroke(); }
  }
}

function settings() {
  const nImg = demo.side() ** 2;
  const ignore = Math.min(Number($("ignore").value), nImg);
  return {
    metric: $("metric").value,
    strategy: $("strategy").value,
    keep: nImg - ignore,
    ignore,
    agg: $("agg").value,
    k: Number($("k").value),
    seed: Number($("seed").value),
  };
}

function render() {
  if (!demo) return;
  const s = settings();
  const side = demo.side();
  $("ignoreOut").textContent = `${s.ignore} / ${side * side}`;
  try {
    const kept = demo.kept(s.metric, s.strategy, s.keep);
    const objects = demo.objects();
    drawGrid($("scene"), side, objects, (o) => (o < 0 ? "#eee" : PALETTE[o]), kept);
    drawGrid($("scores"), side, scaled(demo.scores(s.metric)), grey, kept);
    const grid = demo.heatmap(s.metric, s.strategy, s.keep, s.agg);
    const max = Math.max(...grid) || 1;
    drawGrid($("heat"), side, Array.from(grid, (v) => v / max), heat, null);
    $("macs").textContent = `${demo.last_macs().toLocaleString()} multiply-accumulates`;
    drawScatter($("scatter"), demo.scatter_points(s.k, BigInt(s.seed)),
                demo.scatter_labels(s.k, BigInt(s.seed)), kept);
    $("status").textContent = "";
  } catch (e) {
    $("status").textContent = String(e);
  }
}

function rebuild() {
  try {
    demo?.free();
    demo = new Demo(Number($("side").value), BigInt($("seed").value));
    $("ignore").max = demo.side() ** 2;
    render();
  } catch (e) {
    demo = null;
    $("status").textContent = String(e);
  }
}

await init();
$("rebuild").addEventListener("click", rebuild);
for (const id of ["metric", "strategy", "ignore", "agg", "k"]) {
  $(id).addEventListener("input", render);
}
rebuild();
