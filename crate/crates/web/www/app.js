import init, { sparsify, staleness, boundCurve } from "./pkg/sparsim_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function fail(out, e) {
  out.className = "err";
  out.textContent = String(e.message ?? e);
}

function bars(canvas, values, highlight) {
  const g = canvas.getContext("2d");
  g.clearRect(0, 0, canvas.width, canvas.height);
  const top = Math.max(...values.map(Math.abs), 1e-12);
  const w = canvas.width / values.length;
  const mid = values.some((v) => v < 0) ? canvas.height / 2 : canvas.height;
  const scale = (values.some((v) => v < 0) ? canvas.height / 2 : canvas.height) / top;
  values.forEach((v, i) => {
    g.fillStyle = highlight(i) ? "#246" : "#bcd";
    const h = v * scale;
    g.fillRect(i * w + 1, mid - Math.max(h, 0), w - 2, Math.abs(h));
  });
}

$("tk-run").onclick = () => {
  const out = $("tk-out");
  try {
    const values = $("tk-values").value.split(",").map(Number);
    const r = sparsify(new Float64Array(values), num("tk-k"));
    const kept = r.kept;
    out.className = "";
    out.textContent = `‖u − top_k(u)‖² / ‖u‖² = ${r.residualRatio.toFixed(4)}, 1 − k/d = ${r.bound.toFixed(4)}`;
    bars($("tk-plot"), values, (i) => kept[i] !== 0);
  } catch (e) {
    fail(out, e);
  }
};

$("st-run").onclick = () => {
  const out = $("st-out");
  try {
    const r = staleness(num("st-workers"), num("st-var"), BigInt(num("st-updates")), BigInt(num("st-seed")));
    out.className = "";
    out.textContent = `mean ${r.mean.toFixed(3)}, max ${r.max}`;
    bars($("st-plot"), Array.from(r.counts), () => true);
  } catch (e) {
    fail(out, e);
  }
};

$("b-run").onclick = () => {
  const out = $("b-out");
  try {
    const ts = [];
    for (let e = 1; e <= 6.0001; e += 0.25) ts.push(BigInt(Math.round(10 ** e)));
    const r = boundCurve(num("b-l"), num("b-s"), num("b-mu"), num("b-rho"), num("b-lambda"), num("b-c"), new BigUint64Array(ts));
    const curves = [Array.from(r.decaying), Array.from(r.constant)];
    const finite = curves.flat().filter((v) => Number.isFinite(v) && v > 0);
    const lo = Math.log10(Math.min(...finite));
    const hi = Math.log10(Math.max(...finite));
    const c = $("b-plot");
    const g = c.getContext("2d");
    g.clearRect(0, 0, c.width, c.height);
    const x = (t) => ((Math.log10(Number(t)) - 1) / 5) * (c.width - 20) + 10;
    const y = (v) => c.height - 10 - ((Math.log10(v) - lo) / (hi - lo || 1)) * (c.height - 20);
    curves.forEach((vals, k) => {
      g.setLineDash(k ? [6, 4] : []);
      g.strokeStyle = k ? "#a52" : "#246";
      g.beginPath();
      let started = false;
      vals.forEach((v, i) => {
        if (!(Number.isFinite(v) && v > 0)) return;
        started ? g.lineTo(x(ts[i]), y(v)) : g.moveTo(x(ts[i]), y(v));
        started = true;
      });
      g.stroke();
    });
    out.className = "";
    out.textContent = `bound at T = 10⁶: ${curves[0].at(-1).toExponential(3)} (decaying), ${curves[1].at(-1).toExponential(3)} (constant)`;
  } catch (e) {
    fail(out, e);
  }
};

await init();
for (const id of ["tk-run", "st-run", "b-run"]) $(id).click();
