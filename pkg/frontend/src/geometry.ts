/**
 * World/canvas coordinate mapping and bearing math.
 *
 * World frame: meters, origin at the room's bottom-left corner, x east,
 * y north, angles in degrees counterclockwise with 0 pointing east.
 * Canvas frame: pixels, origin top-left, y increasing downward.
 */

export interface Calibration {
  /** pixels per meter */
  scale: number;
  /** canvas x of world x = 0 */
  ox: number;
  /** canvas y of world y = 0 (the room's bottom edge) */
  oy: number;
}

/** Fit a room of the given size into the canvas, centered, with padding. */
export function fitCalibration(
  widthM: number,
  heightM: number,
  canvasW: number,
  canvasH: number,
  pad = 16,
): Calibration {
  const scale = Math.min(
    (canvasW - 2 * pad) / widthM,
    (canvasH - 2 * pad) / heightM,
  );
  const ox = (canvasW - widthM * scale) / 2;
  const topMargin = (canvasH - heightM * scale) / 2;
  return { scale, ox, oy: canvasH - topMargin };
}

export function worldToCanvas(c: Calibration, x: number, y: number): [number, number] {
  return [c.ox + x * c.scale, c.oy - y * c.scale];
}

export function canvasToWorld(c: Calibration, cx: number, cy: number): [number, number] {
  return [(cx - c.ox) / c.scale, (c.oy - cy) / c.scale];
}

/** Bearing in degrees from (ax, ay) to (px, py), east 0, counterclockwise. */
export function bearingDeg(ax: number, ay: number, px: number, py: number): number {
  return (Math.atan2(py - ay, px - ax) * 180) / Math.PI;
}

export function inRoom(x: number, y: number, widthM: number, heightM: number): boolean {
  return x >= 0 && x <= widthM && y >= 0 && y <= heightM;
}

export function degToRad(deg: number): number {
  return (deg * Math.PI) / 180;
}
