import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import { loadPerRep, loadTrajectory } from "../src/csv.js";

const here = dirname(fileURLToPath(import.meta.url));
const fixture = (name: string) => join(here, "..", "fixtures", name);
const scratch = mkdtempSync(join(tmpdir(), "figures-csv-"));

function tmpCsv(name: string, text: string): string {
  const path = join(scratch, name);
  writeFileSync(path, text);
  return path;
}

describe("loadPerRep", () => {
  it("reads a real run and types every field", () => {
    const rows = loadPerRep(fixture("ex1a-per-rep.csv"));
    expect(rows.length).toBeGreaterThan(0);
    const first = rows[0];
    expect(first.example).toBe("1a");
    expect(first.n).toBe(120);
    expect(first.p).toBe(10);
    expect(typeof first.value).toBe("number");
    const methods = new Set(rows.map((r) => r.method));
    expect(methods).toEqual(new Set(["CR", "ARCS-M"]));
    const metrics = new Set(rows.map((r) => r.metric));
    expect(metrics.has("imb_m")).toBe(true);
    expect(metrics.has("tau")).toBe(true);
  });

  it("rejects a wrong header", () => {
    const path = tmpCsv("bad-header.csv", "rep,method,value\n0,CR,1.0\n");
    expect(() => loadPerRep(path)).toThrow(/expected header/);
  });

  it("rejects a header-only file", () => {
    const path = tmpCsv("empty.csv", "rep,method,example,n,p,batch_size,metric,value\n");
    expect(() => loadPerRep(path)).toThrow(/no data rows/);
  });

  it("rejects a non-numeric value cell", () => {
    const path = tmpCsv(
      "bad-value.csv",
      "rep,method,example,n,p,batch_size,metric,value\n0,CR,1a,120,10,10,imb_m,oops\n",
    );
    expect(() => loadPerRep(path)).toThrow(/non-numeric value/);
  });

  it("rejects a short row", () => {
    const path = tmpCsv(
      "short-row.csv",
      "rep,method,example,n,p,batch_size,metric,value\n0,CR,1a\n",
    );
    expect(() => loadPerRep(path)).toThrow(/parse error/);
  });
});

describe("loadTrajectory", () => {
  it("reads the flat fixture", () => {
    const rows = loadTrajectory(fixture("flat-trajectory.csv"));
    expect(rows).toHaveLength(18);
    expect(rows.every((r) => r.tpr === 1 && r.fpr === 0)).toBe(true);
    expect(rows[0].method).toBe("ARCS-M");
  });

  it("rejects a per-rep file passed as a trajectory", () => {
    expect(() => loadTrajectory(fixture("ex1a-per-rep.csv"))).toThrow(/expected header/);
  });
});
