// Minimal SVG scene building. Figures are plain strings so renders are
// pure functions of their inputs.

export const WIDTH = 640;
export const HEIGHT = 400;
const MARGIN = { top: 24, right: 16, bottom: 40, left: 56 };

export const PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

export interface Scale {
  (v: number): number;
}

export function linearScale(d0: number, d1: number, r0: number, r1: number): Scale {
  const span = d1 - d0 || 1;
  return (v: number) => r0 + ((v - d0) / span) * (r1 - r0);
}

export function plotArea(): { x0: number; x1: number; y0: number; y1: number } {
  return {
    x0: MARGIN.left,
    x1: WIDTH - MARGIN.right,
    y0: HEIGHT - MARGIN.bottom,
    y1: MARGIN.top,
  };
}

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

export function openSvg(title: string): string {
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" ` +
    `viewBox="0 0 ${WIDTH} ${HEIGHT}" font-family="sans-serif" font-size="12">\n` +
    `<title>${esc(title)}</title>\n` +
    `<rect width="${WIDTH}" height="${HEIGHT}" fill="white"/>\n`
  );
}

export function closeSvg(): string {
  return "</svg>\n";
}

export function axes(xLabel: string, yLabel: string): string {
  const a = plotArea();
  return (
    `<line x1="${a.x0}" y1="${a.y0}" x2="${a.x1}" y2="${a.y0}" stroke="black"/>\n` +
    `<line x1="${a.x0}" y1="${a.y0}" x2="${a.x0}" y2="${a.y1}" stroke="black"/>\n` +
    `<text x="${(a.x0 + a.x1) / 2}" y="${HEIGHT - 8}" text-anchor="middle">${esc(xLabel)}</text>\n` +
    `<text x="14" y="${(a.y0 + a.y1) / 2}" text-anchor="middle" ` +
    `transform="rotate(-90 14 ${(a.y0 + a.y1) / 2})">${esc(yLabel)}</text>\n`
  );
}

export function xTicks(values: number[], scale: Scale, fmt: (v: number) => string): string {
  const a = plotArea();
  return values
    .map((v) => {
      const x = scale(v);
      return (
        `<line x1="${x}" y1="${a.y0}" x2="${x}" y2="${a.y0 + 4}" stroke="black"/>\n` +
        `<text x="${x}" y="${a.y0 + 18}" text-anchor="middle">${esc(fmt(v))}</text>\n`
      );
    })
    .join("");
}

export function yTicks(values: number[], scale: Scale, fmt: (v: number) => string): string {
  const a = plotArea();
  return values
    .map((v) => {
      const y = scale(v);
      return (
        `<line x1="${a.x0 - 4}" y1="${y}" x2="${a.x0}" y2="${y}" stroke="black"/>\n` +
        `<text x="${a.x0 - 8}" y="${y + 4}" text-anchor="end">${esc(fmt(v))}</text>\n`
      );
    })
    .join("");
}

export function barGroup(
  xs: { x0: number; x1: number; h: number }[],
  yScale: Scale,
  yZero: number,
  color: string,
): string {
  const bars = xs
    .filter((b) => b.h > 0)
    .map(
      (b) =>
        `<rect x="${b.x0}" y="${yScale(b.h)}" width="${b.x1 - b.x0}" ` +
        `height="${yZero - yScale(b.h)}" fill="${color}" fill-opacity="0.45" ` +
        `stroke="${color}"/>`,
    )
    .join("\n");
  return bars ? bars + "\n" : "";
}

export function polyline(points: [number, number][], color: string, dashed = false): string {
  const attr = dashed ? ' stroke-dasharray="6 4"' : "";
  const pts = points.map(([x, y]) => `${x},${y}`).join(" ");
  return `<polyline points="${pts}" fill="none" stroke="${color}" stroke-width="1.5"${attr}/>\n`;
}

export function legend(entries: { label: string; color: string; dashed?: boolean }[]): string {
  const a = plotArea();
  return entries
    .map((e, i) => {
      const y = a.y1 + 14 + i * 16;
      const dash = e.dashed ? ' stroke-dasharray="6 4"' : "";
      return (
        `<line x1="${a.x1 - 130}" y1="${y}" x2="${a.x1 - 106}" y2="${y}" ` +
        `stroke="${e.color}" stroke-width="2"${dash}/>\n` +
        `<text x="${a.x1 - 100}" y="${y + 4}" class="legend-label">${esc(e.label)}</text>\n`
      );
    })
    .join("");
}
