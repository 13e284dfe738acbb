/** Metric curves from experiment CSVs: one line per config group with an
 * optional mean +/- standard-error band across seeds/instances. */

import { Row, requireColumns } from "./csv.js";
import { MARGIN, PALETTE, SvgDoc, WIDTH, HEIGHT, drawFrame, linearScale } from "./svg.js";

export interface CurveSpec {
  rows: Row[];
  yColumn: string;          // "logjoint" | "ess_over_l" | "kl_global" | ...
  xColumn: string;          // "sweep" | "step"
  groupBy: string[];        // e.g. ["method", "K", "L", "lf"]
  band: boolean;
  title?: string;
}

interface Series {
  key: string;
  points: Array<{ x: number; mean: number; se: number; n: number }>;
}

export function buildSeries(spec: CurveSpec): Series[] {
  requireColumns(spec.rows, [spec.yColumn, spec.xColumn, ...spec.groupBy]);
  const groups = new Map<string, Map<number, number[]>>();
  for (const row of spec.rows) {
    const y = Number(row[spec.yColumn]);
    if (row[spec.yColumn] === "" || Number.isNaN(y)) continue;
    const key = spec.groupBy.map((g) => `${g}=${row[g] || "-"}`).join(" ");
    const x = Number(row[spec.xColumn]);
    if (!groups.has(key)) groups.set(key, new Map());
    const byX = groups.get(key)!;
    if (!byX.has(x)) byX.set(x, []);
    byX.get(x)!.push(y);
  }
  const out: Series[] = [];
  for (const key of [...groups.keys()].sort()) {
    const byX = groups.get(key)!;
    const points = [...byX.keys()].sort((a, b) => a - b).map((x) => {
      const vals = byX.get(x)!;
      const mean = vals.reduce((a, b) => a + b, 0) / vals.length;
      const varSum = vals.reduce((a, b) => a + (b - mean) * (b - mean), 0);
      const se = vals.length > 1 ? Math.sqrt(varSum / (vals.length - 1) / vals.length) : 0;
      return { x, mean, se, n: vals.length };
    });
    out.push({ key, points });
  }
  if (out.length === 0) {
    throw new Error("no rows left after filtering; empty group set");
  }
  return out;
}

export function renderCurves(spec: CurveSpec): string {
  const series = buildSeries(spec);
  let xLo = Infinity, xHi = -Infinity, yLo = Infinity, yHi = -Infinity;
  for (const s of series) {
    for (const p of s.points) {
      xLo = Math.min(xLo, p.x);
      xHi = Math.max(xHi, p.x);
      yLo = Math.min(yLo, p.mean - (spec.band ? p.se : 0));
      yHi = Math.max(yHi, p.mean + (spec.band ? p.se : 0));
    }
  }
  const pad = (yHi - yLo || 1) * 0.05;
  const xs = linearScale(xLo, xHi, MARGIN.left, WIDTH - MARGIN.right);
  const ys = linearScale(yLo - pad, yHi + pad, HEIGHT - MARGIN.bottom, MARGIN.top);
  const doc = new SvgDoc();
  drawFrame(doc, xs, ys, spec.xColumn, spec.title ?? spec.yColumn);
  series.forEach((s, i) => {
    const color = PALETTE[i % PALETTE.length];
    if (spec.band && s.points.some((p) => p.se > 0)) {
      const upper = s.points.map((p): [number, number] => [xs.map(p.x), ys.map(p.mean + p.se)]);
      const lower = s.points
        .slice()
        .reverse()
        .map((p): [number, number] => [xs.map(p.x), ys.map(p.mean - p.se)]);
      doc.path([...upper, ...lower], "none", 0, color, 0.18);
    }
    const line = s.points.map((p): [number, number] => [xs.map(p.x), ys.map(p.mean)]);
    doc.path(line, color, 1.8);
    for (const [px, py] of line) doc.circle(px, py, 2.4, color);
    doc.text(WIDTH - MARGIN.right + 8, MARGIN.top + 14 * (i + 1), s.key, "start", color);
  });
  return doc.render();
}
