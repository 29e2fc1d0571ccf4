import init, { edgeCurve, basisCount, energyErrorSeries, Trainer } from "./pkg/sympkan_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function rows(flat, width) {
  const out = [];
  for (let i = 0; i < flat.length; i += width) out.push(Array.from(flat.slice(i, i + width)));
  return out;
}

function plotLines(canvas, xs, series, colors) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const all = series.flat().filter(Number.isFinite);
  let lo = Math.min(...all), hi = Math.max(...all);
  if (hi - lo < 1e-12) { lo -= 1; hi += 1; }
  const x0 = xs[0], x1 = xs[xs.length - 1];
  const px = (x) => 40 + (w - 50) * (x - x0) / (x1 - x0);
  const py = (y) => h - 20 - (h - 30) * (y - lo) / (hi - lo);
  ctx.strokeStyle = "#bbb";
  ctx.strokeRect(40, 10, w - 50, h - 30);
  ctx.fillStyle = "#555";
  ctx.fillText(hi.toPrecision(3), 2, 14);
  ctx.fillText(lo.toPrecision(3), 2, h - 20);
  ctx.fillText(x0.toPrecision(3), 40, h - 5);
  ctx.fillText(x1.toPrecision(3), w - 40, h - 5);
  series.forEach((ys, k) => {
    ctx.strokeStyle = colors[k];
    ctx.beginPath();
    let started = false;
    ys.forEach((y, i) => {
      if (!Number.isFinite(y)) { started = false; return; }
      if (started) ctx.lineTo(px(xs[i]), py(y)); else ctx.moveTo(px(xs[i]), py(y));
      started = true;
    });
    ctx.stroke();
  });
}

function heatmap(canvas, values, n) {
  const ctx = canvas.getContext("2d");
  const cell = canvas.width / n;
  const lo = Math.min(...values), hi = Math.max(...values);
  values.forEach((v, i) => {
    const t = hi > lo ? (v - lo) / (hi - lo) : 0;
    ctx.fillStyle = `hsl(${240 - 240 * t}, 70%, 50%)`;
    ctx.fillRect((i % n) * cell, Math.floor(i / n) * cell, cell + 1, cell + 1);
  });
}

// spline edge
let coeffs = [];
function rebuildCoeffs() {
  const n = basisCount(num("e-grid"), num("e-deg"));
  coeffs = Array.from({ length: n }, (_, i) => coeffs[i] ?? Math.sin(i));
  const box = $("e-coeffs");
  box.innerHTML = "";
  coeffs.forEach((c, i) => {
    const s = document.createElement("input");
    Object.assign(s, { type: "range", min: -2, max: 2, step: 0.05, value: c, title: `c${i}` });
    s.oninput = () => { coeffs[i] = Number(s.value); drawEdge(); };
    box.appendChild(s);
  });
  drawEdge();
}
function drawEdge() {
  const r = rows(edgeCurve(num("e-grid"), num("e-deg"), Float64Array.from(coeffs), num("e-wb"), num("e-ws"), 301), 3);
  plotLines($("e-plot"), r.map((x) => x[0]), [r.map((x) => x[1]), r.map((x) => x[2])], ["#1f77b4", "#ff7f0e"]);
}

// integrators
function runIntegrators() {
  const r = rows(energyErrorSeries($("i-sys").value, num("i-q"), num("i-p"), num("i-dt"), num("i-t"), 400), 4);
  const lg = (v) => Math.log10(Math.max(v, 1e-16));
  plotLines($("i-plot"), r.map((x) => x[0]), [1, 2, 3].map((k) => r.map((x) => lg(x[k]))), ["#d62728", "#2ca02c", "#9467bd"]);
}

// training
let trainer = null;
function newTrainer() {
  trainer?.free();
  trainer = new Trainer($("t-sys").value, BigInt(num("t-seed")), num("t-hidden"), num("t-grid"), num("t-deg"));
  drawTrainer();
}
function drawTrainer(loss) {
  const n = 40;
  const maps = trainer.energyMaps(n, 2.0);
  heatmap($("t-learned"), Array.from(maps.slice(0, n * n)), n);
  heatmap($("t-true"), Array.from(maps.slice(n * n)), n);
  const r = rows(trainer.rollout(1.0, 0.0, 10.0, 200), 5);
  const c = $("t-roll"), ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const s = (v) => c.width / 2 + v * c.width / 6;
  [[1, 2, "#1f77b4"], [3, 4, "#999"]].forEach(([qi, pi, col]) => {
    ctx.strokeStyle = col;
    ctx.beginPath();
    r.forEach((x, i) => (i ? ctx.lineTo(s(x[qi]), c.height - s(x[pi])) : ctx.moveTo(s(x[qi]), c.height - s(x[pi]))));
    ctx.stroke();
  });
  const l = loss ?? NaN;
  $("t-info").textContent = `steps ${trainer.steps}, train loss ${l.toExponential(3)}, test loss ${trainer.testLoss().toExponential(3)}`;
}

function guard(f) {
  return () => {
    try { f(); $("status").textContent = ""; } catch (e) { $("status").textContent = String(e); }
  };
}

await init();
$("status").textContent = "";
["e-grid", "e-deg"].forEach((id) => ($(id).onchange = guard(rebuildCoeffs)));
["e-wb", "e-ws"].forEach((id) => ($(id).oninput = guard(drawEdge)));
$("i-run").onclick = guard(runIntegrators);
$("t-new").onclick = guard(newTrainer);
$("t-step").onclick = guard(() => drawTrainer(trainer.step(10)));
guard(rebuildCoeffs)();
guard(runIntegrators)();
guard(newTrainer)();
