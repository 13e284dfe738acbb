/** Deterministic SVG assembly: fixed canvas, fixed precision, no runtime
 * randomness or environment-dependent layout, so output bytes are a pure
 * function of the inputs. */

export const WIDTH = 640;
export const HEIGHT = 420;
export const MARGIN = { left: 62, right: 120, top: 28, bottom: 46 };

export const PALETTE = [
  "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
  "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22",
];

export function fmt(x: number): string {
  if (!Number.isFinite(x)) return "0";
  const s = x.toFixed(2);
  return s === "-0.00" ? "0.00" : s;
}

export interface Scale {
  lo: number;
  hi: number;
  map(v: number): number;
}

export function linearScale(lo: number, hi: number, outLo: number, outHi: number): Scale {
  const span = hi - lo || 1;
  return { lo, hi, map: (v) => outLo + ((v - lo) / span) * (outHi - outLo) };
}

/** Round bounds outward to 1/2/5-style ticks. */
export function niceTicks(lo: number, hi: number, n = 5): number[] {
  if (!(hi > lo)) return [lo];
  const rawStep = (hi - lo) / n;
  const mag = Math.pow(10, Math.floor(Math.log10(rawStep)));
  const norm = rawStep / mag;
  const step = (norm >= 5 ? 5 : norm >= 2 ? 2 : 1) * mag;
  const first = Math.ceil(lo / step) * step;
  const ticks: number[] = [];
  for (let v = first; v <= hi + 1e-9 * step; v += step) ticks.push(v);
  return ticks;
}

export function axisLabel(v: number): string {
  const a = Math.abs(v);
  if (a >= 100000 || (a > 0 && a < 0.01)) return v.toExponential(1);
  return Number(v.toPrecision(6)).toString();
}

export class SvgDoc {
  private parts: string[] = [];

  constructor(width = WIDTH, height = HEIGHT) {
    this.parts.push(
      `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
        `viewBox="0 0 ${width} ${height}" font-family="monospace" font-size="11">`,
      `<rect width="${width}" height="${height}" fill="white"/>`,
    );
  }

  raw(s: string): void {
    this.parts.push(s);
  }

  line(x1: number, y1: number, x2: number, y2: number, stroke: string, width = 1): void {
    this.parts.push(
      `<line x1="${fmt(x1)}" y1="${fmt(y1)}" x2="${fmt(x2)}" y2="${fmt(y2)}" ` +
        `stroke="${stroke}" stroke-width="${width}"/>`,
    );
  }

  path(points: Array<[number, number]>, stroke: string, width = 1.5, fill = "none", opacity = 1): void {
    if (points.length === 0) return;
    const d = points
      .map(([x, y], i) => `${i === 0 ? "M" : "L"}${fmt(x)} ${fmt(y)}`)
      .join(" ");
    const op = opacity === 1 ? "" : ` opacity="${opacity}"`;
    this.parts.push(`<path d="${d}${fill === "none" ? "" : " Z"}" stroke="${stroke}" ` +
      `stroke-width="${width}" fill="${fill}"${op}/>`);
  }

  circle(x: number, y: number, r: number, fill: string, opacity = 1): void {
    const op = opacity === 1 ? "" : ` opacity="${opacity}"`;
    this.parts.push(`<circle cx="${fmt(x)}" cy="${fmt(y)}" r="${fmt(r)}" fill="${fill}"${op}/>`);
  }

  cross(x: number, y: number, size: number, stroke: string): void {
    this.line(x - size, y - size, x + size, y + size, stroke, 2);
    this.line(x - size, y + size, x + size, y - size, stroke, 2);
  }

  text(x: number, y: number, s: string, anchor = "start", fill = "#222"): void {
    this.parts.push(
      `<text x="${fmt(x)}" y="${fmt(y)}" text-anchor="${anchor}" fill="${fill}">${escapeXml(s)}</text>`,
    );
  }

  render(): string {
    return this.parts.join("\n") + "\n</svg>\n";
  }
}

export function escapeXml(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

export function drawFrame(doc: SvgDoc, xs: Scale, ys: Scale, xLabel: string, yLabel: string): void {
  const { left, top } = MARGIN;
  const right = WIDTH - MARGIN.right;
  const bottom = HEIGHT - MARGIN.bottom;
  doc.line(left, bottom, right, bottom, "#444");
  doc.line(left, top, left, bottom, "#444");
  for (const t of niceTicks(xs.lo, xs.hi)) {
    const px = xs.map(t);
    doc.line(px, bottom, px, bottom + 4, "#444");
    doc.text(px, bottom + 16, axisLabel(t), "middle");
  }
  for (const t of niceTicks(ys.lo, ys.hi)) {
    const py = ys.map(t);
    doc.line(left - 4, py, left, py, "#444");
    doc.text(left - 7, py + 3, axisLabel(t), "end");
    doc.line(left, py, right, py, "#eee");
  }
  doc.text((left + right) / 2, HEIGHT - 10, xLabel, "middle");
  doc.text(14, top - 8, yLabel, "start");
}
