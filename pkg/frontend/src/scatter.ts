/** Scatter panels: instance points colored by inferred assignment, cluster
 * means marked, ring-mixture panels overlay the decoded ring. */

import * as fs from "node:fs";
import { MARGIN, PALETTE, SvgDoc, WIDTH, HEIGHT, drawFrame, linearScale } from "./svg.js";

export interface LatentDump {
  model: string;
  mu: number[][];
  c: number[];
  tau?: number[][];
  h?: number[];
  ring?: number[][];
}

export function readInstance(base: string, index: number): number[][] {
  const meta = JSON.parse(fs.readFileSync(base + ".json", "utf-8"));
  const [count, n, dim] = [meta.instances, meta.n_points, meta.dim];
  if (index < 0 || index >= count) {
    throw new Error(`instance ${index} outside corpus of ${count}`);
  }
  const buf = fs.readFileSync(base + ".bin");
  const per = n * dim;
  const all = new Float64Array(buf.buffer, buf.byteOffset, count * per);
  const x: number[][] = [];
  for (let i = 0; i < n; i++) {
    x.push([all[index * per + i * dim], all[index * per + i * dim + 1]]);
  }
  return x;
}

export function renderScatter(x: number[][], latent: LatentDump): string {
  if (latent.c.length !== x.length) {
    throw new Error(`latent dump has ${latent.c.length} assignments for ` +
      `${x.length} points`);
  }
  let lo = Infinity, hi = -Infinity;
  for (const p of x) {
    lo = Math.min(lo, p[0], p[1]);
    hi = Math.max(hi, p[0], p[1]);
  }
  for (const m of latent.mu) {
    lo = Math.min(lo, m[0], m[1]);
    hi = Math.max(hi, m[0], m[1]);
  }
  const pad = (hi - lo || 1) * 0.08;
  const xs = linearScale(lo - pad, hi + pad, MARGIN.left, WIDTH - MARGIN.right);
  const ys = linearScale(lo - pad, hi + pad, HEIGHT - MARGIN.bottom, MARGIN.top);
  const doc = new SvgDoc();
  drawFrame(doc, xs, ys, "x1", "x2");
  x.forEach((p, i) => {
    const color = PALETTE[latent.c[i] % PALETTE.length];
    doc.circle(xs.map(p[0]), ys.map(p[1]), 2.6, color, 0.8);
  });
  if (latent.ring) {
    for (const m of latent.mu) {
      const pts = latent.ring.map((g): [number, number] =>
        [xs.map(g[0] + m[0]), ys.map(g[1] + m[1])]);
      doc.path(pts, "#222", 1.0);
    }
  }
  latent.mu.forEach((m, k) => {
    doc.cross(xs.map(m[0]), ys.map(m[1]), 5, PALETTE[k % PALETTE.length]);
  });
  latent.mu.forEach((_, k) => {
    doc.text(WIDTH - MARGIN.right + 8, MARGIN.top + 14 * (k + 1),
      `cluster ${k}`, "start", PALETTE[k % PALETTE.length]);
  });
  return doc.render();
}
