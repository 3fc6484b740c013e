// Wires the three playground surfaces to the wasm module. Build the module
// first (see README: wasm-pack build --target web) so ./pkg exists.

import init, { layer_shape_table, ScenePlayground } from "./pkg/hsicnn_wasm.js";

await init();

// --- 1: layer-shape explorer -----------------------------------------------

const shapeInputs = ["sh-bands", "sh-depth", "sh-stride", "sh-kernels", "sh-classes"]
  .map((id) => document.getElementById(id));

function refreshShapes() {
  const [bands, depth, stride, kernels, classes] = shapeInputs.map((el) =>
    Math.max(0, el.valueAsNumber | 0));
  const out = document.getElementById("shape-out");
  let rows;
  try {
    rows = JSON.parse(layer_shape_table(bands, depth, stride, kernels, 1, classes));
  } catch {
    out.textContent = "invalid input";
    return;
  }
  if (rows.error) {
    out.textContent = rows.error;
    return;
  }
  const table = document.createElement("table");
  table.innerHTML = "<tr><th>stage</th><th>shape</th><th></th></tr>";
  for (const r of rows) {
    const tr = document.createElement("tr");
    for (const text of [r.stage, r.shape, r.detail]) {
      const td = document.createElement("td");
      td.textContent = text;
      tr.appendChild(td);
    }
    table.appendChild(tr);
  }
  out.replaceChildren(table);
}
shapeInputs.forEach((el) => el.addEventListener("input", refreshShapes));
refreshShapes();

// --- 2 and 3: scene, spectra, training --------------------------------------

const PALETTE = ["#e6194b", "#3cb44b", "#ffe119", "#4363d8", "#f58231",
  "#911eb4", "#46f0f0", "#f032e6", "#bcf60c", "#fabebe", "#008080",
  "#e6beff", "#9a6324", "#fffac8", "#800000", "#aaffc3"];

let playground = null;
let running = false;
let history = [];

function blit(canvasId, bytes, size) {
  const canvas = document.getElementById(canvasId);
  canvas.width = size;
  canvas.height = size;
  const ctx = canvas.getContext("2d");
  ctx.putImageData(new ImageData(new Uint8ClampedArray(bytes), size, size), 0, 0);
}

function drawSpectra() {
  const canvas = document.getElementById("spectra");
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const groups = JSON.parse(playground.class_spectra_json());
  let lo = Infinity, hi = -Infinity;
  for (const g of groups) for (const v of g.signature) {
    lo = Math.min(lo, v); hi = Math.max(hi, v);
  }
  const pad = 8, span = hi - lo || 1;
  const px = (i, n) => pad + (w - 2 * pad) * i / Math.max(1, n - 1);
  const py = (v) => h - pad - (h - 2 * pad) * (v - lo) / span;
  for (const g of groups) {
    const color = PALETTE[(g.class - 1) % PALETTE.length];
    ctx.strokeStyle = color;
    ctx.fillStyle = color;
    ctx.beginPath();
    g.signature.forEach((v, i) => {
      if (i === 0) ctx.moveTo(px(i, g.signature.length), py(v));
      else ctx.lineTo(px(i, g.signature.length), py(v));
    });
    ctx.stroke();
    g.mean.forEach((v, i) => {
      if (i % 4 === 0) ctx.fillRect(px(i, g.mean.length) - 1.5, py(v) - 1.5, 3, 3);
    });
  }
}

function drawLossChart() {
  const canvas = document.getElementById("losschart");
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  if (history.length < 2) return;
  const maxLoss = Math.max(...history.map((p) => p.loss), 1e-9);
  const maxIter = history[history.length - 1].iteration;
  const px = (it) => 4 + (w - 8) * it / maxIter;
  ctx.strokeStyle = "#d46";
  ctx.beginPath();
  history.forEach((p, i) => {
    const y = h - 4 - (h - 8) * p.loss / maxLoss;
    if (i === 0) ctx.moveTo(px(p.iteration), y); else ctx.lineTo(px(p.iteration), y);
  });
  ctx.stroke();
  ctx.strokeStyle = "#4a6";
  ctx.beginPath();
  history.forEach((p, i) => {
    const y = h - 4 - (h - 8) * p.test_acc;
    if (i === 0) ctx.moveTo(px(p.iteration), y); else ctx.lineTo(px(p.iteration), y);
  });
  ctx.stroke();
}

function setStatus(text) {
  document.getElementById("status").textContent = text;
}

function makeScene() {
  running = false;
  history = [];
  const v = (id) => document.getElementById(id).valueAsNumber;
  try {
    // u64 parameters cross the wasm boundary as BigInt.
    playground = new ScenePlayground(v("sc-classes"), v("sc-bands"), v("sc-size"),
      v("sc-noise"), BigInt(v("sc-seed") | 0));
  } catch (err) {
    setStatus(String(err));
    return;
  }
  const size = playground.width();
  blit("truth", playground.ground_truth_rgba(), size);
  blit("pred", playground.prediction_rgba(false), size);
  drawSpectra();
  drawLossChart();
  setStatus("scene ready — untrained model");
}

function stepOnce(iters, drawMap = true) {
  const stats = JSON.parse(playground.train_steps(iters));
  history.push(stats);
  if (drawMap) blit("pred", playground.prediction_rgba(false), playground.width());
  drawLossChart();
  setStatus(`iter ${stats.iteration} (epoch ${stats.epoch})  loss ${stats.loss.toFixed(4)}  ` +
    `train ${stats.train_acc.toFixed(3)}  test ${stats.test_acc.toFixed(3)}`);
  return stats;
}

let frame = 0;
function loop() {
  if (!running || !playground) return;
  // Full-scene map rendering dominates a frame, so redraw it every other
  // step batch.
  frame += 1;
  const stats = stepOnce(10, frame % 2 === 0);
  if (stats.train_acc >= 1.0 && stats.iteration >= 100) {
    running = false;
    document.getElementById("tr-run").textContent = "train";
    blit("pred", playground.prediction_rgba(false), playground.width());
    return;
  }
  requestAnimationFrame(loop);
}

document.getElementById("sc-make").addEventListener("click", makeScene);
document.getElementById("tr-run").addEventListener("click", (ev) => {
  if (!playground) return;
  running = !running;
  ev.target.textContent = running ? "pause" : "train";
  if (running) requestAnimationFrame(loop);
});
document.getElementById("tr-step").addEventListener("click", () => {
  if (playground) { running = false; stepOnce(50); }
});
document.getElementById("tr-reset").addEventListener("click", () => {
  if (!playground) return;
  running = false;
  history = [];
  playground.reset(BigInt(Date.now() % 100000));
  blit("pred", playground.prediction_rgba(false), playground.width());
  drawLossChart();
  setStatus("weights reset");
});

makeScene();
