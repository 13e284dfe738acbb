/** Writes the miniature input fixtures and their golden SVGs.
 *
 * The inputs are fixed literal data; re-running must reproduce the goldens
 * byte for byte (that is what the golden test asserts). */

import * as fs from "node:fs";
import * as path from "node:path";
import { fileURLToPath } from "node:url";
import { main } from "./cli.js";

const here = path.dirname(fileURLToPath(import.meta.url));
const dataDir = path.resolve(here, "..", "testdata");

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function writeFixtures(): void {
  fs.mkdirSync(dataDir, { recursive: true });
  const rnd = mulberry32(12345);

  // eval-style CSV: two methods, sweeps 1..5, three instances
  const evalRows = ["model,method,instance,seed,K,L,lf,sweep,logjoint,ess_over_l,recon_mse,logjoint_evals,wall_ms"];
  for (const method of ["apg", "gibbs"]) {
    for (let inst = 0; inst < 3; inst++) {
      for (let sweep = 1; sweep <= 5; sweep++) {
        const base = method === "apg" ? -520 : -540;
        const lj = base + sweep * 14 + (rnd() - 0.5) * 8;
        const ess = Math.min(1, 0.25 + 0.12 * sweep + (rnd() - 0.5) * 0.05);
        const recon = 40 / sweep + (rnd() - 0.5);
        evalRows.push(
          `gmm,${method},${inst},0,5,10,,${sweep},${lj.toFixed(4)},${ess.toFixed(6)},${recon.toFixed(6)},400.0,12.00`,
        );
      }
    }
  }
  fs.writeFileSync(path.join(dataDir, "mini_eval.csv"), evalRows.join("\n") + "\n");

  // train-style CSV with the analytic divergence columns
  const trainRows = ["step,model,method,K,L,seed,logjoint,ess_over_l,kl_global,kl_local,wall_ms"];
  for (let step = 500; step <= 5000; step += 500) {
    const klg = 220 * Math.exp(-step / 1200) + 2 + (rnd() - 0.5);
    const kll = 0.9 * Math.exp(-step / 2000) + 0.02 + (rnd() - 0.5) * 0.01;
    trainRows.push(
      `${step},gmm,apg,5,10,0,${(-460 - 2000 / step).toFixed(4)},0.310000,${klg.toFixed(6)},${kll.toFixed(6)},55.00`,
    );
  }
  fs.writeFileSync(path.join(dataDir, "mini_train.csv"), trainRows.join("\n") + "\n");

  // miniature corpus: one instance, 40 points, 2 clusters
  const n = 40;
  const centers = [[-2.5, -1.0], [2.0, 1.5]];
  const pts: number[] = [];
  const assign: number[] = [];
  for (let i = 0; i < n; i++) {
    const c = i % 2;
    assign.push(c);
    const angle = 2 * Math.PI * rnd();
    const radius = 1.5 + 0.1 * (rnd() - 0.5);
    pts.push(centers[c][0] + radius * Math.cos(angle),
             centers[c][1] + radius * Math.sin(angle));
  }
  const buf = Buffer.alloc(8 * pts.length);
  pts.forEach((v, i) => buf.writeDoubleLE(v, 8 * i));
  fs.writeFileSync(path.join(dataDir, "mini_corpus.bin"), buf);
  fs.writeFileSync(path.join(dataDir, "mini_corpus.json"), JSON.stringify({
    model: "dmm", instances: 1, n_points: n, dim: 2,
    layout: "instances x n_points x dim, little-endian float64",
  }, null, 1));
  const ring: number[][] = [];
  for (let k = 0; k <= 60; k++) {
    const h = k / 60;
    ring.push([1.5 * Math.cos(2 * Math.PI * h), 1.5 * Math.sin(2 * Math.PI * h)]);
  }
  fs.writeFileSync(path.join(dataDir, "mini_latents.json"), JSON.stringify([
    { model: "dmm", mu: centers, c: assign, ring },
  ]));
}

export function renderAll(prefix: string): void {
  const d = (f: string) => path.join(dataDir, f);
  const runs: string[][] = [
    ["curves", "--csv", d("mini_eval.csv"), "--y", "logjoint", "--band",
     "--out", d(`${prefix}logjoint.svg`)],
    ["curves", "--csv", d("mini_eval.csv"), "--y", "ess", "--band",
     "--out", d(`${prefix}ess.svg`)],
    ["curves", "--csv", d("mini_train.csv"), "--y", "kl_global", "--x", "step",
     "--group", "method,K,L", "--out", d(`${prefix}kl.svg`)],
    ["scatter", "--instance", d("mini_corpus"), "--index", "0",
     "--latent", d("mini_latents.json"), "--out", d(`${prefix}scatter.svg`)],
  ];
  for (const argv of runs) {
    const rc = main(argv);
    if (rc !== 0) throw new Error(`render failed: ${argv.join(" ")}`);
  }
}

if (process.argv[1] && process.argv[1].endsWith("regen_golden.js")) {
  writeFixtures();
  renderAll("golden_");
  console.log(`fixtures + goldens written under ${dataDir}`);
}
