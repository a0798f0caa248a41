export function median(xs: number[]): number {
  if (xs.length === 0) return NaN;
  const s = [...xs].sort((a, b) => a - b);
  const mid = Math.floor(s.length / 2);
  return s.length % 2 === 1 ? s[mid] : (s[mid - 1] + s[mid]) / 2;
}

export function mean(xs: number[]): number {
  return xs.reduce((a, b) => a + b, 0) / (xs.length || 1);
}

export interface Bins {
  edges: number[]; // length bins + 1
  counts: number[]; // length bins
}

/** Equal-width bins over [lo, hi] shared by every series in a figure. */
export function histogram(values: number[], lo: number, hi: number, bins: number): Bins {
  const span = hi > lo ? hi - lo : 1;
  const counts = new Array<number>(bins).fill(0);
  for (const v of values) {
    const idx = Math.min(bins - 1, Math.max(0, Math.floor(((v - lo) / span) * bins)));
    counts[idx] += 1;
  }
  const edges = Array.from({ length: bins + 1 }, (_, i) => lo + (i * span) / bins);
  return { edges, counts };
}

/** Mean of `value` grouped by integer `key`, returned in key order. */
export function meanByKey(rows: { key: number; value: number }[]): { key: number; value: number }[] {
  const sums = new Map<number, { total: number; count: number }>();
  for (const r of rows) {
    const acc = sums.get(r.key) ?? { total: 0, count: 0 };
    acc.total += r.value;
    acc.count += 1;
    sums.set(r.key, acc);
  }
  return [...sums.entries()]
    .sort((a, b) => a[0] - b[0])
    .map(([key, acc]) => ({ key, value: acc.total / acc.count }));
}
