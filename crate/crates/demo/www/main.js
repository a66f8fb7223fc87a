import init, { Demo } from "./pkg/prunemeta_demo.js";

const $ = (id) => document.getElementById(id);
const KINDS = ["q", "k", "v", "o", "gate", "up", "down"];
let demo = null;

function report(el, fn) {
  el.classList.remove("err");
  try {
    return fn();
  } catch (e) {
    el.textContent = String(e.message || e);
    el.classList.add("err");
    return null;
  }
}

function build() {
  report($("model-status"), () => {
    if (demo) demo.free();
    demo = null;
    const layers = Number($("layers").value);
    demo = new Demo(Number($("d-model").value), layers, Number($("seed").value), $("search-sparsity").value);
    const select = $("submodule");
    select.innerHTML = "";
    for (let l = 0; l < layers; l++) {
      for (const k of KINDS) select.add(new Option(`layer.${l}.${k}`));
    }
    $("model-status").textContent = "ready";
  });
}

function drawMask(r) {
  const c = $("mask-canvas");
  const ctx = c.getContext("2d");
  const cell = Math.max(2, Math.floor(Math.min(c.width / r.cols, c.height / r.rows)));
  ctx.clearRect(0, 0, c.width, c.height);
  const max = Math.max(...r.scores);
  r.scores.forEach((s, k) => {
    const i = Math.floor(k / r.cols), j = k % r.cols;
    const shade = Math.round(255 * (1 - (max > 0 ? s / max : 0)));
    ctx.fillStyle = r.mask[k] ? `rgb(${shade},${shade},255)` : "#eee";
    ctx.fillRect(j * cell, i * cell, cell - 1, cell - 1);
  });
}

function showMask() {
  if (!demo) return;
  report($("mask-info"), () => {
    const r = JSON.parse(demo.mask($("submodule").value, $("mask-metric").value, $("mask-sparsity").value));
    const kept = r.mask.filter(Boolean).length;
    $("mask-info").textContent =
      `${r.rows}x${r.cols}, kept ${kept}/${r.mask.length}; model L_div at this metric and sparsity: ${r.l_div.toPrecision(6)}`;
    drawMask(r);
  });
}

function drawCurve(r) {
  const c = $("search-canvas");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const ys = r.best_so_far;
  const lo = r.oracle_l_div, hi = Math.max(...ys.slice(0, 1), lo * 1.05);
  const pad = 30;
  const x = (i) => pad + (i / Math.max(1, ys.length - 1)) * (c.width - 2 * pad);
  const y = (v) => c.height - pad - ((v - lo) / (hi - lo || 1)) * (c.height - 2 * pad);
  ctx.strokeStyle = "#c33";
  ctx.setLineDash([4, 4]);
  ctx.beginPath();
  ctx.moveTo(pad, y(lo));
  ctx.lineTo(c.width - pad, y(lo));
  ctx.stroke();
  ctx.setLineDash([]);
  ctx.strokeStyle = "#236";
  ctx.beginPath();
  ys.forEach((v, i) => (i ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v))));
  ctx.stroke();
  ctx.fillStyle = "#222";
  ctx.fillText("trial", c.width - pad - 20, c.height - 8);
  ctx.fillText(`oracle ${lo.toPrecision(5)}`, pad + 4, y(lo) - 4);
}

function runSearch() {
  if (!demo) return;
  $("search-info").textContent = "searching...";
  setTimeout(() => report($("search-info"), () => {
    const r = JSON.parse(demo.search($("algo").value, Number($("search-seed").value),
      Number($("budget").value), Number($("pop").value)));
    const ratio = r.best_l_div / r.oracle_l_div;
    $("search-info").textContent =
      `best ${r.best_config} = ${r.best_l_div.toPrecision(6)} after ${r.evaluations_used} evaluations\n` +
      `oracle ${r.oracle_config} = ${r.oracle_l_div.toPrecision(6)} (ratio ${ratio.toFixed(4)})`;
    drawCurve(r);
  }), 10);
}

function showAlignment() {
  if (!demo) return;
  report($("align-info"), () => {
    const r = JSON.parse(demo.alignment($("align-metric").value));
    $("align-info").textContent = r.layers
      .map((l) => `layer ${l.layer}: mean |weight - activation| ${l.mean_difference.toPrecision(5)}`)
      .concat(`model ${r.model_mean.toPrecision(5)}`)
      .join("\n");
    const c = $("align-canvas");
    const ctx = c.getContext("2d");
    ctx.clearRect(0, 0, c.width, c.height);
    const max = Math.max(...r.layers.map((l) => l.mean_difference)) || 1;
    const w = c.width / r.layers.length;
    r.layers.forEach((l, i) => {
      const h = (l.mean_difference / max) * (c.height - 20);
      ctx.fillStyle = "#4a7";
      ctx.fillRect(i * w + 8, c.height - h, w - 16, h);
      ctx.fillStyle = "#222";
      ctx.fillText(`L${l.layer}`, i * w + 10, 12);
    });
  });
}

await init();
$("build").onclick = build;
$("show-mask").onclick = showMask;
$("run-search").onclick = runSearch;
$("show-align").onclick = showAlignment;
build();
showMask();
