import init, { Scene, ScanBench } from "./pkg/mambavsr_demo.js";

const SIZE = 64;
const $ = (id) => document.getElementById(id);

function paint(canvas, bytes, width, height) {
  canvas.width = width;
  canvas.height = height;
  const ctx = canvas.getContext("2d");
  ctx.putImageData(new ImageData(new Uint8ClampedArray(bytes), width, height), 0, 0);
}

function currentScene() {
  return new Scene($("scene").value, SIZE, SIZE);
}

function drawScan() {
  const scene = currentScene();
  paint($("scene-canvas"), scene.image(), SIZE, SIZE);
  paint($("rank-canvas"), scene.rank_map($("mode").value), SIZE, SIZE);
  scene.free();
}

function drawUpscale() {
  const scene = currentScene();
  const up = scene.bicubic_round_trip(Number($("factor").value));
  const w = up.low_width();
  paint($("low-canvas"), up.low(), w, w);
  paint($("high-canvas"), up.high(), SIZE, SIZE);
  const db = up.psnr_db();
  $("psnr").textContent = `bicubic, PSNR ${Number.isFinite(db) ? db.toFixed(2) + " dB" : "inf"}`;
  up.free();
  scene.free();
}

function runBench() {
  const bench = new ScanBench(Number($("len").value), Number($("channels").value), Number($("state").value), 0n);
  const len = Number($("len").value);
  const rows = $("bench-rows");
  rows.innerHTML = "";
  const t0 = performance.now();
  bench.sequential();
  const seqMs = performance.now() - t0;
  rows.insertAdjacentHTML("beforeend",
    `<tr><td>sequential</td><td>${seqMs.toFixed(2)}</td><td>${(len / seqMs * 1000).toFixed(0)}</td><td>-</td><td>reference</td></tr>`);
  for (const chunk of $("chunks").value.split(",").map(Number).filter((c) => c > 0)) {
    const start = performance.now();
    const dev = bench.chunked(chunk);
    const ms = performance.now() - start;
    const ok = dev <= 1e-5;
    rows.insertAdjacentHTML("beforeend",
      `<tr><td>${chunk}</td><td>${ms.toFixed(2)}</td><td>${(len / ms * 1000).toFixed(0)}</td><td>${dev.toExponential(2)}</td><td>${ok ? "ok" : "FAILED"}</td></tr>`);
  }
  bench.free();
}

function guarded(f) {
  return () => {
    try {
      f();
      $("status").textContent = "Ready.";
    } catch (e) {
      $("status").textContent = `Error: ${e.message ?? e}`;
    }
  };
}

await init();
$("scene").addEventListener("change", guarded(() => { drawScan(); drawUpscale(); }));
$("mode").addEventListener("change", guarded(drawScan));
$("factor").addEventListener("change", guarded(drawUpscale));
$("bench").addEventListener("click", guarded(runBench));
guarded(() => { drawScan(); drawUpscale(); })();
