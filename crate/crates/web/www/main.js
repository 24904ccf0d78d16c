import init, { equilibrium, sample_paths, stop_loss_tilt } from "./pkg/jumpmfg_web.js";

const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

function list(s) {
  return s.split(",").map((x) => Number(x.trim())).filter((x) => !Number.isNaN(x));
}

function readForm(form) {
  const out = {};
  for (const el of form.elements) {
    if (el.name) out[el.name] = el.type === "number" ? Number(el.value) : el.value;
  }
  return out;
}

function call(fn, input, out) {
  try {
    return JSON.parse(fn(JSON.stringify(input)));
  } catch (e) {
    out.innerHTML = `<p class="err">${e}</p>`;
    return null;
  }
}

function fmt(x, digits = 4) {
  return x === null || x === undefined ? "" : Number(x).toFixed(digits);
}

// Draws each series as a polyline; series = [{x, y, color}], null y values break the line.
function plot(canvas, series, label) {
  const ctx = canvas.getContext("2d");
  const { width, height } = canvas;
  const pad = 40;
  ctx.clearRect(0, 0, width, height);
  const xs = series.flatMap((s) => s.x);
  const ys = series.flatMap((s) => s.y.filter((v) => v !== null));
  if (!ys.length) return;
  const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  let [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  if (y1 - y0 < 1e-12) { y0 -= 1; y1 += 1; }
  const px = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (width - 2 * pad);
  const py = (y) => height - pad + ((y0 - y) / (y1 - y0)) * (height - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, width - 2 * pad, height - 2 * pad);
  ctx.fillStyle = "#444";
  ctx.font = "12px system-ui";
  ctx.fillText(fmt(y1, 3), 2, pad + 4);
  ctx.fillText(fmt(y0, 3), 2, height - pad);
  ctx.fillText(label, pad, pad - 8);
  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.beginPath();
    let open = false;
    s.x.forEach((x, i) => {
      const y = s.y[i];
      if (y === null) { open = false; return; }
      if (open) ctx.lineTo(px(x), py(y)); else ctx.moveTo(px(x), py(y));
      open = true;
    });
    ctx.stroke();
  }
}

function wire(id, handler) {
  const sec = document.getElementById(id);
  const form = sec.querySelector("form");
  const out = sec.querySelector(".out");
  const canvas = sec.querySelector("canvas");
  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    out.textContent = "working...";
    setTimeout(() => handler(readForm(form), out, canvas), 0);
  });
}

function solveEquilibrium(f, out) {
  const alpha = list(f.alpha);
  const rho = list(f.rho);
  const input = {
    ...f,
    alpha,
    alpha_weights: alpha.map(() => 1 / alpha.length),
    rho,
    rho_weights: rho.map(() => 1 / rho.length),
  };
  const r = call(equilibrium, input, out);
  if (!r) return;
  const rows = r.classes.map((c) =>
    `<tr><td>${fmt(c.alpha, 2)}</td><td>${fmt(c.rho, 2)}</td><td>${fmt(c.theta_mean)}</td>` +
    `<td>${fmt(c.theta_min)} .. ${fmt(c.theta_max)}</td><td>${fmt(c.theta_zero_claim)}</td><td>${fmt(c.y0)}</td></tr>`).join("");
  out.innerHTML =
    `<table><tr><th>alpha</th><th>rho</th><th>mean theta</th><th>range</th><th>zero-claim formula</th><th>Y0</th></tr>${rows}</table>` +
    `<p class="note">${r.backend} backend; E[rho] = ${fmt(r.e_rho, 3)}, E[1/alpha] = ${fmt(r.e_inv_alpha, 3)}; ` +
    `fixed-point residual ${r.fixed_point_residual.toExponential(2)} (${fmt(r.fixed_point_residual_se, 3)} SE)</p>`;
}

function simulatePaths(f, out, canvas) {
  const r = call(sample_paths, { ...f, steps: 200 }, out);
  if (!r) return;
  const total = r.paths.map((p) => p.common.at(-1)).reduce((a, b) => a + b, 0);
  out.innerHTML = `<p class="note">${r.paths.length} paths, ${total} common events in total. ` +
    `Common events hit every agent on the same path; own events do not affect the price.</p>`;
  plot(canvas, r.paths.map((p, i) => ({ x: r.t, y: p.price, color: COLORS[i % COLORS.length] })), "price");
}

function solveTilt(f, out, canvas) {
  const r = call(stop_loss_tilt, f, out);
  if (!r) return;
  const shown = r.tilted.map((row, n) => ({ n, row })).filter(({ row }) => row.some((v) => v !== null)).slice(0, 8);
  out.innerHTML = `<p class="note">Y0 = ${fmt(r.y0)}; original rate ${fmt(r.rate, 2)}; ` +
    `jump step weight ${fmt(r.jump_step_weight, 3)} (monotone while at most 1). ` +
    `Curves: tilted rate after 0, 1, 2, ... events.</p>`;
  plot(canvas, shown.map(({ n, row }) => ({ x: r.t, y: row, color: COLORS[n % COLORS.length] })), "rate exp(alpha U)");
}

await init();
wire("eq", solveEquilibrium);
wire("paths", simulatePaths);
wire("tilt", solveTilt);
