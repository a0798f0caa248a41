import { writeFileSync } from "node:fs";

import { loadPerRep, loadTrajectory } from "./csv.js";
import { histogram, meanByKey, median } from "./stats.js";
import {
  PALETTE,
  axes,
  barGroup,
  closeSvg,
  legend,
  linearScale,
  openSvg,
  plotArea,
  polyline,
  xTicks,
  yTicks,
} from "./svg.js";

export type FigureKind = "imbalance_histogram" | "tpr_fpr_trajectory";

export interface FigureSpec {
  csvPath: string;
  kind: FigureKind;
  outPath: string;
  /** Per-rep metric to plot for histograms (imb_m, imb_phi, dncm, dnc, tau). */
  metric?: string;
  /** Subset of methods; omitted means every method present in the CSV. */
  methods?: string[];
}

export interface HistogramSeries {
  method: string;
  values: number[];
  median: number;
  counts: number[];
}

export interface HistogramResult {
  metric: string;
  edges: number[];
  series: HistogramSeries[];
}

export interface TrajectorySeries {
  method: string;
  batches: number[];
  tpr: number[];
  fpr: number[];
}

export interface TrajectoryResult {
  series: TrajectorySeries[];
}

const BINS = 30;

function pickMethods(present: string[], requested?: string[]): string[] {
  if (!requested || requested.length === 0) return present;
  const missing = requested.filter((m) => !present.includes(m));
  if (missing.length > 0) {
    throw new Error(
      `methods [${missing.join(", ")}] not in CSV (present: ${present.join(", ") || "none"})`,
    );
  }
  return requested;
}

export function plotImbalanceHist(spec: FigureSpec): HistogramResult {
  const metric = spec.metric ?? "imb_m";
  // the weighted-feature imbalance is conventionally shown divided by 100
  const scale = metric === "imb_phi" ? 0.01 : 1;
  const rows = loadPerRep(spec.csvPath).filter((r) => r.metric === metric);
  if (rows.length === 0) {
    throw new Error(`no rows with metric "${metric}" in ${spec.csvPath}`);
  }
  const present = [...new Set(rows.map((r) => r.method))];
  const methods = pickMethods(present, spec.methods);

  const byMethod = methods.map((m) => ({
    method: m,
    values: rows.filter((r) => r.method === m).map((r) => r.value * scale),
  }));
  const all = byMethod.flatMap((s) => s.values);
  const lo = Math.min(...all);
  const hi = Math.max(...all);
  const binned = byMethod.map((s) => ({ ...s, bins: histogram(s.values, lo, hi, BINS) }));
  const edges = binned[0].bins.edges;

  const a = plotArea();
  const xs = linearScale(lo, hi, a.x0, a.x1);
  const peak = Math.max(...binned.flatMap((s) => s.bins.counts), 1);
  const ys = linearScale(0, peak, a.y0, a.y1);

  let svg = openSvg(`distribution of ${metric}`);
  svg += axes(metric === "imb_phi" ? `${metric} / 100` : metric, "replications");
  svg += xTicks([lo, (lo + hi) / 2, hi], xs, (v) => v.toPrecision(3));
  svg += yTicks([0, peak], ys, (v) => String(Math.round(v)));
  binned.forEach((s, i) => {
    const bars = s.bins.counts.map((h, b) => ({
      x0: xs(edges[b]),
      x1: xs(edges[b + 1]),
      h,
    }));
    svg += barGroup(bars, ys, a.y0, PALETTE[i % PALETTE.length]);
  });
  svg += legend(binned.map((s, i) => ({ label: s.method, color: PALETTE[i % PALETTE.length] })));
  svg += closeSvg();
  writeFileSync(spec.outPath, svg);

  return {
    metric,
    edges,
    series: binned.map((s) => ({
      method: s.method,
      values: s.values,
      median: median(s.values),
      counts: s.bins.counts,
    })),
  };
}

export function plotTprFpr(spec: FigureSpec): TrajectoryResult {
  const rows = loadTrajectory(spec.csvPath);
  const present = [...new Set(rows.map((r) => r.method))];
  const methods = pickMethods(present, spec.methods);

  const series: TrajectorySeries[] = methods.map((m) => {
    const mine = rows.filter((r) => r.method === m);
    const tpr = meanByKey(mine.map((r) => ({ key: r.batch, value: r.tpr })));
    const fpr = meanByKey(mine.map((r) => ({ key: r.batch, value: r.fpr })));
    return {
      method: m,
      batches: tpr.map((p) => p.key),
      tpr: tpr.map((p) => p.value),
      fpr: fpr.map((p) => p.value),
    };
  });

  const a = plotArea();
  const maxBatch = Math.max(...series.flatMap((s) => s.batches));
  const xs = linearScale(0, maxBatch || 1, a.x0, a.x1);
  const ys = linearScale(0, 1, a.y0, a.y1);

  let svg = openSvg("selection rates by batch");
  svg += axes("batch", "rate");
  svg += xTicks(series[0].batches, xs, (v) => String(v));
  svg += yTicks([0, 0.5, 1], ys, (v) => v.toFixed(1));
  series.forEach((s, i) => {
    const color = PALETTE[i % PALETTE.length];
    svg += polyline(s.batches.map((b, k) => [xs(b), ys(s.tpr[k])]), color);
    svg += polyline(s.batches.map((b, k) => [xs(b), ys(s.fpr[k])]), color, true);
  });
  svg += legend(
    series.flatMap((s, i) => [
      { label: `${s.method} TPR`, color: PALETTE[i % PALETTE.length] },
      { label: `${s.method} FPR`, color: PALETTE[i % PALETTE.length], dashed: true },
    ]),
  );
  svg += closeSvg();
  writeFileSync(spec.outPath, svg);

  return { series };
}
