#!/usr/bin/env node
/** Figure CLI.
 *
 *   popgibbs-plot curves --csv a.csv [b.csv ...] --y logjoint|ess|kl_global|kl_local|recon
 *                        [--x sweep|step] [--group method,K,L,lf] [--band] --out fig.svg
 *   popgibbs-plot scatter --instance corpus_base --index 0 --latent dump.json
 *                         [--pick 0] --out fig.svg
 *
 * Output is deterministic: identical inputs give identical bytes.
 */

import * as fs from "node:fs";
import { parseCsv, Row } from "./csv.js";
import { renderCurves } from "./curves.js";
import { readInstance, renderScatter, LatentDump } from "./scatter.js";

const Y_COLUMNS: Record<string, string> = {
  logjoint: "logjoint",
  ess: "ess_over_l",
  kl: "kl_global",
  kl_global: "kl_global",
  kl_local: "kl_local",
  recon: "recon_mse",
};

function parseArgs(argv: string[]): { cmd: string; flags: Map<string, string[]> } {
  const cmd = argv[0];
  const flags = new Map<string, string[]>();
  let key: string | null = null;
  for (const a of argv.slice(1)) {
    if (a.startsWith("--")) {
      key = a.slice(2);
      if (!flags.has(key)) flags.set(key, []);
    } else if (key !== null) {
      flags.get(key)!.push(a);
    } else {
      throw new Error(`unexpected argument ${a}`);
    }
  }
  return { cmd, flags };
}

function one(flags: Map<string, string[]>, name: string, fallback?: string): string {
  const vals = flags.get(name);
  if (!vals || vals.length === 0) {
    if (fallback !== undefined) return fallback;
    throw new Error(`missing --${name}`);
  }
  return vals[vals.length - 1];
}

export function main(argv: string[]): number {
  try {
    const { cmd, flags } = parseArgs(argv);
    if (cmd === "curves") {
      const csvPaths = flags.get("csv") ?? [];
      if (csvPaths.length === 0) throw new Error("missing --csv");
      const rows: Row[] = [];
      for (const p of csvPaths) rows.push(...parseCsv(fs.readFileSync(p, "utf-8")));
      const yFlag = one(flags, "y");
      const yColumn = Y_COLUMNS[yFlag] ?? yFlag;
      const xColumn = one(flags, "x", yColumn.startsWith("kl") ? "step" : "sweep");
      const groupBy = one(flags, "group", "method,K,L,lf").split(",").filter(Boolean);
      const svg = renderCurves({
        rows, yColumn, xColumn, groupBy,
        band: flags.has("band"),
        title: one(flags, "title", yFlag),
      });
      fs.writeFileSync(one(flags, "out"), svg);
      return 0;
    }
    if (cmd === "scatter") {
      const x = readInstance(one(flags, "instance"), Number(one(flags, "index", "0")));
      const dumps = JSON.parse(fs.readFileSync(one(flags, "latent"), "utf-8"));
      const pick = Number(one(flags, "pick", one(flags, "index", "0")));
      const latent: LatentDump = Array.isArray(dumps) ? dumps[pick] : dumps;
      if (!latent) throw new Error(`no latent record ${pick} in dump`);
      fs.writeFileSync(one(flags, "out"), renderScatter(x, latent));
      return 0;
    }
    throw new Error(`unknown command ${cmd ?? "(none)"}; use curves|scatter`);
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 2;
  }
}

if (process.argv[1] && process.argv[1].endsWith("cli.js")) {
  process.exit(main(process.argv.slice(2)));
}
