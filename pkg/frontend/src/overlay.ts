/** SVG markup for a capture: instance contours plus the sidewalk trapezoid.
 * Pure string assembly so it renders anywhere and tests without a DOM. */

import type { CaptureDoc, InstanceDoc, TrapezoidDoc } from "./types.js";

export const CLASS_COLORS: Record<string, string> = {
  sidewalk: "#59a14f",
  building: "#9c755f",
  traffic_sign: "#edc948",
  traffic_light: "#e15759",
  pole: "#4e79a7",
};

const FALLBACK_COLOR = "#bab0ac";

export function classColor(name: string): string {
  return CLASS_COLORS[name] ?? FALLBACK_COLOR;
}

/** Contour vertices arrive as [row, col]; SVG wants "x,y" = "col,row". */
export function polygonPoints(
  polygon: ReadonlyArray<readonly [number, number]>,
): string {
  return polygon.map(([row, col]) => `${col},${row}`).join(" ");
}

function trapezoidCorners(t: TrapezoidDoc): Array<[number, number]> {
  // spans are half-open [start, end); draw to the last covered column
  return [
    [t.top_row, t.top_span[0]],
    [t.top_row, t.top_span[1] - 1],
    [t.bottom_row, t.bottom_span[1] - 1],
    [t.bottom_row, t.bottom_span[0]],
  ];
}

function bounds(doc: CaptureDoc): { minX: number; minY: number; maxX: number; maxY: number } {
  let minX = Infinity;
  let minY = Infinity;
  let maxX = -Infinity;
  let maxY = -Infinity;
  const take = (row: number, col: number) => {
    minX = Math.min(minX, col);
    maxX = Math.max(maxX, col);
    minY = Math.min(minY, row);
    maxY = Math.max(maxY, row);
  };
  for (const instance of doc.instances) {
    for (const [row, col] of instance.polygon) take(row, col);
  }
  if (doc.sidewalk?.trapezoid) {
    for (const [row, col] of trapezoidCorners(doc.sidewalk.trapezoid)) {
      take(row, col);
    }
  }
  if (minX > maxX) {
    // nothing to draw; keep a unit box so the svg stays valid
    return { minX: 0, minY: 0, maxX: 1, maxY: 1 };
  }
  return { minX, minY, maxX, maxY };
}

function instanceMarkup(instance: InstanceDoc, rejected: boolean): string {
  const color = classColor(instance.class);
  const [u, v] = instance.centroid;
  const opacity = rejected ? "0.08" : "0.35";
  const dash = rejected ? ' stroke-dasharray="3 2"' : "";
  return (
    `<polygon points="${polygonPoints(instance.polygon)}" fill="${color}"` +
    ` fill-opacity="${opacity}" stroke="${color}" stroke-width="1"${dash}>` +
    `<title>${instance.class} #${instance.instance_id}</title></polygon>` +
    `<circle cx="${u}" cy="${v}" r="1.5" fill="${color}" />`
  );
}

/** Whole-capture overlay; rejectedIds grays out instances the reviewer
 * has struck so the picture tracks the verdict being built. */
export function captureSvg(
  doc: CaptureDoc,
  rejectedIds: ReadonlySet<number> = new Set(),
): string {
  const box = bounds(doc);
  const pad = 4;
  const viewBox = [
    box.minX - pad,
    box.minY - pad,
    box.maxX - box.minX + 2 * pad,
    box.maxY - box.minY + 2 * pad,
  ].join(" ");
  const parts: string[] = [];
  if (doc.sidewalk?.trapezoid) {
    parts.push(
      `<polygon points="${polygonPoints(trapezoidCorners(doc.sidewalk.trapezoid))}"` +
        ` fill="${CLASS_COLORS.sidewalk}" fill-opacity="0.15"` +
        ` stroke="${CLASS_COLORS.sidewalk}" stroke-width="1" stroke-dasharray="4 3">` +
        `<title>sidewalk ${doc.sidewalk.width_m.toFixed(2)} m</title></polygon>`,
    );
  }
  for (const instance of doc.instances) {
    parts.push(instanceMarkup(instance, rejectedIds.has(instance.instance_id)));
  }
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" viewBox="${viewBox}"` +
    ` preserveAspectRatio="xMidYMid meet">${parts.join("")}</svg>`
  );
}
