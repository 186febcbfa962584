import { describe, expect, it } from "vitest";
import { drawFrame, DrawCtx } from "../src/render.js";
import { fitCalibration, worldToCanvas } from "../src/geometry.js";
import { sampleFrame } from "./protocol.test.js";

interface Op {
  op: string;
  args: number[];
  fill: string;
  stroke: string;
}

class RecCtx implements DrawCtx {
  fillStyle: string | CanvasGradient | CanvasPattern = "";
  strokeStyle: string | CanvasGradient | CanvasPattern = "";
  lineWidth = 1;
  globalAlpha = 1;
  ops: Op[] = [];

  private rec(op: string, ...args: number[]): void {
    this.ops.push({
      op,
      args,
      fill: String(this.fillStyle),
      stroke: String(this.strokeStyle),
    });
  }

  clearRect(...a: number[]): void { this.rec("clearRect", ...a); }
  fillRect(...a: number[]): void { this.rec("fillRect", ...a); }
  strokeRect(...a: number[]): void { this.rec("strokeRect", ...a); }
  beginPath(): void { this.rec("beginPath"); }
  moveTo(...a: number[]): void { this.rec("moveTo", ...a); }
  lineTo(...a: number[]): void { this.rec("lineTo", ...a); }
  arc(...a: number[]): void { this.rec("arc", ...a); }
  closePath(): void { this.rec("closePath"); }
  fill(): void { this.rec("fill"); }
  stroke(): void { this.rec("stroke"); }
}

const W = 720;
const H = 560;

function draw(frame = sampleFrame(), marker: { x: number; y: number } | null = null) {
  const ctx = new RecCtx();
  const cal = fitCalibration(frame.scene.width_m, frame.scene.height_m, W, H);
  drawFrame(ctx, frame, marker, cal, W, H);
  return { ctx, cal };
}

describe("drawFrame", () => {
  it("draws the agent disc at exactly the message pose, no extrapolation", () => {
    const frame = sampleFrame({ pose: { x: 2.875, y: 1.625, heading_deg: 105 } });
    const { ctx, cal } = draw(frame);
    const [px, py] = worldToCanvas(cal, 2.875, 1.625);
    const disc = ctx.ops.filter((o) => o.op === "arc" && o.args[2] === 6);
    expect(disc.length).toBe(1);
    expect(disc[0].args[0]).toBe(px);
    expect(disc[0].args[1]).toBe(py);
  });

  it("redrawing the same frame yields identical agent ops", () => {
    const frame = sampleFrame();
    const a = draw(frame).ctx.ops.filter((o) => o.op === "arc");
    const b = draw(frame).ctx.ops.filter((o) => o.op === "arc");
    expect(a).toEqual(b);
  });

  it("sweeps the view wedge 90 degrees around the heading", () => {
    const frame = sampleFrame({ pose: { x: 3, y: 2, heading_deg: 30 } });
    const { ctx } = draw(frame);
    const wedge = ctx.ops.find((o) => o.op === "arc" && o.args[2] > 6);
    expect(wedge).toBeDefined();
    const [, , , a0, a1] = wedge!.args;
    // canvas angles are clockwise, so world 30+-45 degrees lands negated
    expect(a0).toBeCloseTo(-(75 * Math.PI) / 180, 10);
    expect(a1).toBeCloseTo(-(-15 * Math.PI) / 180, 10);
  });

  it("drops one breadcrumb per trajectory pose", () => {
    const frame = sampleFrame({
      trajectory: [[1, 1, 0], [1.25, 1, 0], [1.5, 1, 0], [1.5, 1.25, 90]],
    });
    const { ctx } = draw(frame);
    const crumbs = ctx.ops.filter((o) => o.op === "arc" && o.args[2] === 2);
    expect(crumbs.length).toBe(4);
  });

  it("fills blocked cells and object footprints, outlining the target", () => {
    const frame = sampleFrame();
    frame.scene.grid[0][0] = 1;
    frame.scene.grid[7][11] = 1;
    const { ctx } = draw(frame);
    const wallRects = ctx.ops.filter((o) => o.op === "fillRect" && o.fill === "#3a3f44");
    expect(wallRects.length).toBe(2);
    const objRects = ctx.ops.filter(
      (o) => o.op === "fillRect" && o.fill !== "#3a3f44" && o.fill !== "#f4f1ea",
    );
    // three footprint cells across the two objects in the sample frame
    expect(objRects.length).toBe(3);
    // the target instance has one footprint cell, outlined
    const outlines = ctx.ops.filter((o) => o.op === "strokeRect");
    expect(outlines.length).toBe(1);
  });

  it("anchors cells by their top edge to keep north up", () => {
    const frame = sampleFrame();
    frame.scene.grid[0][0] = 1;
    const { ctx, cal } = draw(frame);
    const wall = ctx.ops.find((o) => o.op === "fillRect" && o.fill === "#3a3f44")!;
    const [cx, cy] = worldToCanvas(cal, 0, 0.25);
    expect(wall.args[0]).toBeCloseTo(cx, 10);
    expect(wall.args[1]).toBeCloseTo(cy, 10);
    expect(wall.args[2]).toBeCloseTo(0.25 * cal.scale, 10);
  });

  it("draws the click marker only when present", () => {
    const withMarker = draw(sampleFrame(), { x: 2, y: 2 });
    const marks = withMarker.ctx.ops.filter((o) => o.op === "arc" && o.args[2] === 8);
    expect(marks.length).toBe(1);
    const without = draw(sampleFrame(), null);
    expect(without.ctx.ops.filter((o) => o.op === "arc" && o.args[2] === 8).length).toBe(0);
  });
});
