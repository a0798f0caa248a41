import { readFileSync } from "node:fs";
import Papa from "papaparse";

export interface PerRepRow {
  rep: number;
  method: string;
  example: string;
  n: number;
  p: number;
  batch_size: number;
  metric: string;
  value: number;
}

export interface TrajectoryRow {
  rep: number;
  method: string;
  batch: number;
  tpr: number;
  fpr: number;
}

const PER_REP_HEADER = ["rep", "method", "example", "n", "p", "batch_size", "metric", "value"];
const TRAJECTORY_HEADER = ["rep", "method", "batch", "tpr", "fpr"];

function parseTable(path: string, expectedHeader: string[]): Record<string, string>[] {
  const text = readFileSync(path, "utf8");
  const parsed = Papa.parse<Record<string, string>>(text.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const e = parsed.errors[0];
    throw new Error(`${path}: parse error at row ${e.row}: ${e.message}`);
  }
  const header = parsed.meta.fields ?? [];
  if (header.join(",") !== expectedHeader.join(",")) {
    throw new Error(
      `${path}: expected header "${expectedHeader.join(",")}", got "${header.join(",")}"`,
    );
  }
  if (parsed.data.length === 0) {
    throw new Error(`${path}: no data rows`);
  }
  return parsed.data;
}

function num(row: Record<string, string>, field: string, path: string, line: number): number {
  const v = Number(row[field]);
  if (!Number.isFinite(v) && row[field] !== "nan") {
    throw new Error(`${path}: non-numeric ${field} "${row[field]}" on data row ${line}`);
  }
  return v;
}

export function loadPerRep(path: string): PerRepRow[] {
  return parseTable(path, PER_REP_HEADER).map((r, i) => ({
    rep: num(r, "rep", path, i),
    method: r.method,
    example: r.example,
    n: num(r, "n", path, i),
    p: num(r, "p", path, i),
    batch_size: num(r, "batch_size", path, i),
    metric: r.metric,
    value: num(r, "value", path, i),
  }));
}

export function loadTrajectory(path: string): TrajectoryRow[] {
  return parseTable(path, TRAJECTORY_HEADER).map((r, i) => ({
    rep: num(r, "rep", path, i),
    method: r.method,
    batch: num(r, "batch", path, i),
    tpr: num(r, "tpr", path, i),
    fpr: num(r, "fpr", path, i),
  }));
}
