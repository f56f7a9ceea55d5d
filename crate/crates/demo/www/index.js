import init, { calibrated_density, cluster_prior, fit_sim1 } from "./pkg/betamix_demo.js";

const $ = (id) => document.getElementById(id);

function call(fn, ...args) {
  const v = JSON.parse(fn(...args));
  if (v.error) throw new Error(v.error);
  return v;
}

function frame(canvas, xr, yr) {
  const ctx = canvas.getContext("2d");
  const pad = 30;
  const w = canvas.width - 2 * pad;
  const h = canvas.height - 2 * pad;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w, h);
  const px = (x) => pad + ((x - xr[0]) / (xr[1] - xr[0])) * w;
  const py = (y) => pad + h - ((y - yr[0]) / (yr[1] - yr[0])) * h;
  return { ctx, px, py };
}

function line(f, xs, ys, color, width = 2) {
  f.ctx.strokeStyle = color;
  f.ctx.lineWidth = width;
  f.ctx.beginPath();
  xs.forEach((x, i) => (i ? f.ctx.lineTo(f.px(x), f.py(ys[i])) : f.ctx.moveTo(f.px(x), f.py(ys[i]))));
  f.ctx.stroke();
}

function showError(canvas, e) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.fillStyle = "#b00";
  ctx.fillText(e.message, 40, 40);
}

function drawDensity() {
  const mu = +$("mu").value;
  const nu = 10 ** +$("nu").value;
  const om = +$("om").value;
  $("mu-v").textContent = mu.toFixed(2);
  $("nu-v").textContent = nu.toFixed(2);
  $("om-v").textContent = om.toFixed(2);
  try {
    const v = call(calibrated_density, mu, nu, om);
    const top = Math.max(...v.pool, ...v.calibrated) * 1.05;
    const f = frame($("density"), [v.y[0], v.y[v.y.length - 1]], [0, top]);
    line(f, v.y, v.pool, "#999");
    line(f, v.y, v.calibrated, "#1f5fbf");
  } catch (e) {
    showError($("density"), e);
  }
}

function drawPrior() {
  try {
    const v = call(cluster_prior, +$("psi").value, Math.round(+$("t").value));
    const n = v.pmf.length;
    const top = Math.max(...v.pmf) * 1.05;
    const f = frame($("prior"), [0.5, n + 0.5], [0, top]);
    f.ctx.fillStyle = "#1f5fbf";
    const bw = Math.max(1, f.px(1.4) - f.px(1));
    v.pmf.forEach((p, i) => {
      const x = f.px(i + 1) - bw / 2;
      f.ctx.fillRect(x, f.py(p), bw, f.py(0) - f.py(p));
    });
  } catch (e) {
    showError($("prior"), e);
  }
}

function ecdf(values, grid) {
  const s = [...values].sort((a, b) => a - b);
  return grid.map((g) => s.filter((x) => x <= g).length / s.length);
}

function runFit() {
  $("fit-out").textContent = "running...";
  setTimeout(() => {
    try {
      const v = call(fit_sim1, BigInt(+$("seed").value), Math.round(+$("fit-t").value), Math.round(+$("iters").value), +$("fit-psi").value);
      const f = frame($("pit"), [0, 1], [0, 1]);
      f.ctx.fillStyle = "rgba(31, 95, 191, 0.25)";
      f.ctx.beginPath();
      v.grid.forEach((g, i) => (i ? f.ctx.lineTo(f.px(g), f.py(v.upper[i])) : f.ctx.moveTo(f.px(g), f.py(v.upper[i]))));
      for (let i = v.grid.length - 1; i >= 0; i--) f.ctx.lineTo(f.px(v.grid[i]), f.py(v.lower[i]));
      f.ctx.fill();
      line(f, [0, 1], [0, 1], "#222", 1);
      line(f, v.grid, ecdf(v.pool_pits, v.grid), "#c0392b");
      const pmf = v.cluster_pmf.map((p, i) => `${i + 1}:${p.toFixed(2)}`).join(" ");
      $("fit-out").textContent =
        `KS ${v.ks.toFixed(4)} (critical ${v.ks_critical.toFixed(4)}), grid points outside band: ${v.misses}\n` +
        `clusters ${pmf}\n(mu, nu) acceptance ${v.mu_nu_acceptance?.toFixed(3)}`;
    } catch (e) {
      $("fit-out").textContent = e.message;
    }
  }, 10);
}

await init();
for (const id of ["mu", "nu", "om"]) $(id).addEventListener("input", drawDensity);
for (const id of ["psi", "t"]) $(id).addEventListener("input", drawPrior);
$("run").addEventListener("click", runFit);
drawDensity();
drawPrior();
