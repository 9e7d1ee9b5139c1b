import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient, ServiceError } from "../src/api.js";
import { colorField, rampColor } from "../src/colormap.js";
import { DesignerApp, progressCurves, recordGap } from "../src/viewer.js";
import { MockService } from "./mockService.js";

function makeApp(svc: MockService): DesignerApp {
  return new DesignerApp(new ApiClient("http://mock", svc.fetch));
}

describe("clutch editing", () => {
  let svc: MockService;
  let app: DesignerApp;

  beforeEach(async () => {
    svc = new MockService();
    app = makeApp(svc);
    await app.loadScene();
  });

  it("round-trips a created clutch through the service", async () => {
    const spec = { element: 4, u: 0.2, v: 0.5, du: 0, dv: 1, length: 0.3, width: 0.02 };
    const scene = await app.editClutch({ action: "create", spec });
    expect(scene.clutches).toHaveLength(2);
    expect(scene.clutches[1].spec).toEqual(spec);
    // the rendered mesh is the one the service generated, not a local guess
    expect(scene.clutches[1].mesh.positions[0]).toEqual([4.2, 0.5, 0]);
  });

  it("is idempotent: the same update twice yields identical scene state", async () => {
    const spec = { element: 2, u: 0.1, v: 0.1, du: 1, dv: 0, length: 0.25, width: 0.015 };
    const first = await app.editClutch({ action: "update", index: 0, spec });
    const second = await app.editClutch({ action: "update", index: 0, spec });
    expect(second).toEqual(first);
  });

  it("deletes and renumbers", async () => {
    const spec = { element: 4, u: 0.2, v: 0.5, du: 0, dv: 1, length: 0.3, width: 0.02 };
    await app.editClutch({ action: "create", spec });
    const scene = await app.editClutch({ action: "delete", index: 0 });
    expect(scene.clutches).toHaveLength(1);
    expect(scene.clutches[0].spec).toEqual(spec);
    expect(scene.activation).toEqual([1]);
  });

  it("surfaces the optimization lock as a 409 banner", async () => {
    svc.running = true;
    await expect(
      app.editClutch({ action: "delete", index: 0 }),
    ).rejects.toMatchObject({ status: 409 });
    expect(app.banner).toEqual({ kind: "locked", message: "optimization running" });
  });

  it("rejects malformed edits with 400", async () => {
    await expect(app.editClutch({ action: "create" })).rejects.toMatchObject({
      status: 400,
    });
    await expect(app.editClutch({ action: "delete", index: 7 })).rejects.toMatchObject({
      status: 400,
    });
  });
});

describe("material painting and the coverage budget", () => {
  it("applies edits inside a 15% budget and updates the coverage bar", async () => {
    const svc = new MockService({ numElements: 20, budget: 0.15 });
    const app = makeApp(svc);
    await app.loadScene();
    const ok = await app.paint([0, 1, 2], 1); // 3/20 = 15%
    expect(ok).toBe(true);
    expect(app.banner).toBeNull();
    expect(app.coverageFraction).toBeCloseTo(0.15, 12);
  });

  it("renders a 422 overflow as a budget warning citing 15%", async () => {
    const svc = new MockService({ numElements: 20, budget: 0.15 });
    const app = makeApp(svc);
    await app.loadScene();
    await app.paint([0, 1], 1);
    const ok = await app.paint([2, 3], 1); // would be 20% > 15%
    expect(ok).toBe(false);
    expect(app.banner?.kind).toBe("budget");
    expect(app.banner?.message).toContain("15%");
    expect(app.banner?.message).toContain("20.0%");
    // the rejected edit is not applied
    expect(app.coverageFraction).toBeCloseTo(0.1, 12);
    expect(svc.design.reduce((a, b) => a + b, 0)).toBe(2);
  });

  it("honors a 20% budget boundary exactly", async () => {
    const svc = new MockService({ numElements: 20, budget: 0.2 });
    const app = makeApp(svc);
    await app.loadScene();
    expect(await app.paint([0, 1, 2, 3], 1)).toBe(true); // exactly 20%
    expect(await app.paint([4], 1)).toBe(false); // 25% > 20%
    expect(app.banner?.message).toContain("20%");
    expect(app.coverageFraction).toBeCloseTo(0.2, 12);
  });

  it("painting zero elements leaves coverage unchanged", async () => {
    const svc = new MockService();
    const app = makeApp(svc);
    await app.loadScene();
    await app.paint([0, 1], 1);
    const before = app.coverageFraction;
    expect(await app.paint([], 1)).toBe(true);
    expect(app.coverageFraction).toBe(before);
  });

  it("erasing everything returns coverage to zero", async () => {
    const svc = new MockService({ numElements: 10, budget: 0.5 });
    const app = makeApp(svc);
    await app.loadScene();
    await app.paint([0, 1, 2], 1);
    await app.paint([0, 1, 2], 0);
    expect(app.coverageFraction).toBe(0);
  });

  it("locks painting while a job runs", async () => {
    const svc = new MockService();
    const app = makeApp(svc);
    await app.loadScene();
    svc.running = true;
    expect(await app.paint([0], 1)).toBe(false);
    expect(app.banner?.kind).toBe("locked");
  });
});

describe("strain view", () => {
  it("an all-zero field renders as uniform dark blue with a zero range", () => {
    const { colors, range } = colorField([0, 0, 0, 0]);
    expect(range).toEqual([0, 0]);
    const darkBlue = rampColor(0);
    for (const c of colors) expect(c).toEqual(darkBlue);
  });

  it("maps the field onto [0, max] with red at the peak", () => {
    const { colors, range } = colorField([0, 2, 4]);
    expect(range).toEqual([0, 4]);
    expect(colors[0]).toEqual(rampColor(0));
    expect(colors[1]).toEqual(rampColor(0.5));
    expect(colors[2]).toEqual(rampColor(1));
  });

  it("mode toggle ON to OFF decreases the displayed total energy", async () => {
    const svc = new MockService();
    const app = makeApp(svc);
    await app.loadScene();
    const on = await app.showStrain(0, "ON");
    const off = await app.showStrain(0, "OFF");
    expect(off.energyTotal).toBeLessThan(on.energyTotal);
    expect(off.colormap.colors).toHaveLength(svc.numElements);
  });

  it("the pose selector issues one simulate fetch per pose", async () => {
    const svc = new MockService({ poseLabels: ["bow", "lean", "twist"] });
    const app = makeApp(svc);
    await app.loadScene();
    for (let k = 0; k < 3; k++) await app.showStrain(k, "ON");
    const sims = svc.calls.filter((c) => c === "POST /simulate");
    expect(sims).toHaveLength(3);
  });

  it("simulate failures surface as a non-blocking error banner", async () => {
    const svc = new MockService();
    const app = makeApp(svc);
    await app.loadScene();
    svc.failSimulate = true;
    await expect(app.showStrain(0, "ON")).rejects.toBeInstanceOf(ServiceError);
    expect(app.banner?.kind).toBe("error");
    expect(app.banner?.message).toContain("solver blew up");
    // the app still works after the banner
    svc.failSimulate = false;
    await app.showStrain(0, "ON");
    expect(app.banner).toBeNull();
  });
});

describe("optimization progress scrubbing", () => {
  function seededService(): MockService {
    const svc = new MockService({ numElements: 10, budget: 1.0 });
    const dense = new Array(10).fill(1);
    const mid = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
    const final = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
    svc.seedRun([dense, mid, final], [0.0, 0.1, 0.25]);
    return svc;
  }

  it("slider at zero shows the fully dense overlay", async () => {
    const svc = seededService();
    const app = makeApp(svc);
    await app.loadScene();
    await app.refreshProgress();
    const snap = await app.scrubTo(0);
    expect(snap.design).toEqual(new Array(10).fill(1));
    expect(app.displayedDesign).toEqual(new Array(10).fill(1));
  });

  it("scrubs from dense to final and clears back to the working design", async () => {
    const svc = seededService();
    const app = makeApp(svc);
    await app.loadScene();
    await app.refreshProgress();
    const final = await app.scrubTo(2);
    expect(final.design.reduce((a, b) => a + b, 0)).toBe(3);
    app.clearScrub();
    expect(app.displayedDesign).toEqual(svc.design);
  });

  it("iterations without a snapshot skip to the nearest recorded one", async () => {
    const svc = seededService();
    svc.records = [svc.records[0], svc.records[2]]; // record 1 missing
    const app = makeApp(svc);
    await app.loadScene();
    await app.refreshProgress();
    const snap = await app.scrubTo(1);
    expect([0, 2]).toContain(snap.iteration);
    const far = await app.scrubTo(50);
    expect(far.iteration).toBe(2);
  });

  it("missing snapshots are a 404 at the API level", async () => {
    const svc = seededService();
    const api = new ApiClient("http://mock", svc.fetch);
    await expect(api.getSnapshot(99)).rejects.toMatchObject({ status: 404 });
  });

  it("the final recorded gap exceeds the first recorded gap on the demo run", async () => {
    const svc = seededService();
    const app = makeApp(svc);
    await app.loadScene();
    const records = await app.refreshProgress();
    const first = recordGap(records[0]);
    const last = recordGap(records[records.length - 1]);
    expect(last).toBeGreaterThanOrEqual(first);
  });

  it("plots one ON and one OFF series per motion", () => {
    const svc = new MockService({ poseLabels: ["a", "b", "c"] });
    const dense = new Array(svc.numElements).fill(1);
    svc.seedRun([dense, dense], [0, 0.1]);
    const curves = progressCurves(svc.records, svc.poseLabels);
    expect(curves.series).toHaveLength(6);
    expect(curves.series.map((s) => s.label)).toEqual([
      "a ON",
      "a OFF",
      "b ON",
      "b OFF",
      "c ON",
      "c OFF",
    ]);
    expect(curves.iterations).toEqual([0, 1]);
  });

  it("starting a second job while one runs is rejected with 409", async () => {
    const svc = new MockService();
    const app = makeApp(svc);
    await app.loadScene();
    await app.startOptimization(0.2);
    await expect(app.startOptimization(0.2)).rejects.toMatchObject({ status: 409 });
  });
});

describe("activation toggling", () => {
  it("round-trips activation values through the service", async () => {
    const svc = new MockService();
    const app = makeApp(svc);
    await app.loadScene();
    await app.setActivation([0]);
    expect(app.scene?.activation).toEqual([0]);
    expect(svc.activation).toEqual([0]);
  });

  it("rejects out-of-range or mis-sized activation vectors", async () => {
    const svc = new MockService();
    const app = makeApp(svc);
    await app.loadScene();
    await expect(app.setActivation([0.5, 0.5])).rejects.toMatchObject({ status: 400 });
    await expect(app.setActivation([1.5])).rejects.toMatchObject({ status: 400 });
  });
});
