#!/usr/bin/env node
// Usage:
//   figures imbalance-histogram --csv per_rep.csv --out fig1.svg [--metric imb_m] [--methods CR,ARCS-M]
//   figures tpr-fpr --csv trajectory.csv --out fig3.svg [--methods ARCS-M]

import { plotImbalanceHist, plotTprFpr } from "./figures.js";

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (!key.startsWith("--") || value === undefined) {
      throw new Error(`expected --flag value pairs, got "${argv.slice(i).join(" ")}"`);
    }
    flags.set(key.slice(2), value);
  }
  return flags;
}

function need(flags: Map<string, string>, key: string): string {
  const v = flags.get(key);
  if (v === undefined) throw new Error(`missing required flag --${key}`);
  return v;
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    const flags = parseFlags(rest);
    const methods = flags.get("methods")?.split(",").map((m) => m.trim());
    if (command === "imbalance-histogram") {
      const out = plotImbalanceHist({
        csvPath: need(flags, "csv"),
        kind: "imbalance_histogram",
        outPath: need(flags, "out"),
        metric: flags.get("metric"),
        methods,
      });
      const medians = out.series.map((s) => `${s.method}=${s.median.toFixed(3)}`).join(" ");
      console.log(`wrote ${need(flags, "out")} (${out.metric} medians: ${medians})`);
      return 0;
    }
    if (command === "tpr-fpr") {
      const out = plotTprFpr({
        csvPath: need(flags, "csv"),
        kind: "tpr_fpr_trajectory",
        outPath: need(flags, "out"),
        methods,
      });
      const finals = out.series
        .map((s) => `${s.method} TPR=${s.tpr[s.tpr.length - 1].toFixed(3)}`)
        .join(" ");
      console.log(`wrote ${need(flags, "out")} (final ${finals})`);
      return 0;
    }
    console.error(`unknown command "${command ?? ""}"; use imbalance-histogram or tpr-fpr`);
    return 2;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : String(err)}`);
    return 1;
  }
}

if (process.argv[1] && process.argv[1].endsWith("cli.js")) {
  process.exit(main(process.argv.slice(2)));
}
