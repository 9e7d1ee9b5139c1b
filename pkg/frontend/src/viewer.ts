/**
 * Headless view-model for the designer: everything the rendering layer
 * needs (colors, coverage bar, warnings, progress curves) as plain data,
 * fed exclusively by service responses.
 */

import {
  ApiClient,
  BudgetRejection,
  ClutchEditRequest,
  ProgressRecordData,
  SceneData,
  ServiceError,
  SimulateData,
} from "./api.js";
import { ColormapResult, colorField } from "./colormap.js";

export type Mode = "ON" | "OFF" | "CURRENT";

export interface Banner {
  kind: "budget" | "locked" | "error";
  message: string;
}

export interface StrainView {
  pose: number;
  mode: Mode;
  field: number[];
  colormap: ColormapResult;
  energyTotal: number;
  converged: boolean;
  garmentPositions: number[][];
}

export interface CurveSeries {
  label: string;
  values: number[];
}

export interface ProgressCurves {
  iterations: number[];
  coverage: number[];
  series: CurveSeries[]; // one rho_ON and one rho_OFF series per motion
}

/** Normalized-energy gap the optimizer widens: min rho_ON - max rho_OFF. */
export function recordGap(rec: ProgressRecordData): number {
  return Math.min(...rec.rho_on) - Math.max(...rec.rho_off);
}

export function progressCurves(
  records: ProgressRecordData[],
  poseLabels: string[],
): ProgressCurves {
  const series: CurveSeries[] = [];
  poseLabels.forEach((label, k) => {
    series.push({ label: `${label} ON`, values: records.map((r) => r.rho_on[k]) });
    series.push({ label: `${label} OFF`, values: records.map((r) => r.rho_off[k]) });
  });
  return {
    iterations: records.map((r) => r.iteration),
    coverage: records.map((r) => r.coverage),
    series,
  };
}

export class DesignerApp {
  api: ApiClient;
  scene: SceneData | null = null;
  strain: StrainView | null = null;
  banner: Banner | null = null;
  records: ProgressRecordData[] = [];
  optimizationRunning = false;
  /** Snapshot currently scrubbed to; null shows the working design. */
  scrubbed: { iteration: number; design: number[] } | null = null;

  constructor(api: ApiClient) {
    this.api = api;
  }

  async loadScene(): Promise<SceneData> {
    this.scene = await this.api.getScene();
    return this.scene;
  }

  /** Design overlay for rendering: scrubbed snapshot if any, else working. */
  get displayedDesign(): number[] {
    if (this.scrubbed) return this.scrubbed.design;
    return this.scene ? this.scene.design : [];
  }

  get coverageFraction(): number {
    return this.scene ? this.scene.coverage : 0;
  }

  get coverageBudget(): number {
    return this.scene ? this.scene.coverage_budget : 0;
  }

  /** Fetch one quasi-static state and recolor the garment in place. */
  async showStrain(pose: number, mode: Mode): Promise<StrainView> {
    let sim: SimulateData;
    try {
      sim = await this.api.simulate(pose, mode);
    } catch (e) {
      this.banner = {
        kind: "error",
        message: e instanceof ServiceError ? String(e.detail) : String(e),
      };
      throw e;
    }
    this.banner = null;
    this.strain = {
      pose,
      mode,
      field: sim.densities,
      colormap: colorField(sim.densities),
      energyTotal: sim.energy_total,
      converged: sim.converged,
      garmentPositions: sim.garment_positions,
    };
    return this.strain;
  }

  /**
   * Paint brushed elements to cloth (0) or reinforced (1).
   *
   * A budget overflow (422) is rendered as a warning banner quoting the
   * budget and the attempted coverage; the edit is not applied and the
   * displayed coverage stays at the service-reported current value.
   */
  async paint(elements: number[], value: 0 | 1): Promise<boolean> {
    try {
      const res = await this.api.paint(elements, value);
      if (this.scene) this.scene.coverage = res.coverage;
      this.banner = null;
      await this.loadScene();
      return true;
    } catch (e) {
      if (e instanceof ServiceError && e.status === 422) {
        const d = e.body as BudgetRejection;
        this.banner = {
          kind: "budget",
          message:
            `coverage budget ${(d.budget * 100).toFixed(0)}% exceeded: ` +
            `attempted ${(d.attempted_coverage * 100).toFixed(1)}%, ` +
            `keeping ${(d.current_coverage * 100).toFixed(1)}%`,
        };
        if (this.scene) this.scene.coverage = d.current_coverage;
        return false;
      }
      if (e instanceof ServiceError && e.status === 409) {
        this.banner = { kind: "locked", message: "optimization running" };
        return false;
      }
      throw e;
    }
  }

  /**
   * Submit a clutch edit and reload the scene so the rendered clutch
   * geometry is exactly what the service regenerated (the service is the
   * geometry authority; the UI never extrudes the strip itself).
   */
  async editClutch(edit: ClutchEditRequest): Promise<SceneData> {
    try {
      await this.api.editClutch(edit);
    } catch (e) {
      if (e instanceof ServiceError && e.status === 409) {
        this.banner = { kind: "locked", message: "optimization running" };
      }
      throw e;
    }
    return this.loadScene();
  }

  async setActivation(gamma: number[]): Promise<void> {
    const res = await this.api.setActivation(gamma);
    if (this.scene) this.scene.activation = res.activation;
  }

  async startOptimization(budget?: number): Promise<void> {
    await this.api.startOptimize(budget);
    this.records = [];
    this.optimizationRunning = true;
  }

  async refreshProgress(): Promise<ProgressRecordData[]> {
    const p = await this.api.getProgress();
    this.records = p.records;
    this.optimizationRunning = p.running;
    if (p.error) this.banner = { kind: "error", message: p.error };
    return this.records;
  }

  /**
   * Scrub the iteration slider. Iterations without a recorded snapshot
   * skip to the nearest recorded one (ties toward the earlier record).
   */
  async scrubTo(iteration: number): Promise<{ iteration: number; design: number[] }> {
    if (this.records.length === 0) {
      throw new Error("no optimization records to scrub");
    }
    let bestIdx = 0;
    let bestDist = Infinity;
    this.records.forEach((r, i) => {
      const d = Math.abs(r.iteration - iteration);
      if (d < bestDist) {
        bestDist = d;
        bestIdx = i;
      }
    });
    const rec = this.records[bestIdx];
    const snap = await this.api.getSnapshot(rec.snapshot_id);
    this.scrubbed = { iteration: rec.iteration, design: snap.design };
    return this.scrubbed;
  }

  clearScrub(): void {
    this.scrubbed = null;
  }

  curves(): ProgressCurves {
    const labels = this.scene ? this.scene.pose_labels : [];
    return progressCurves(this.records, labels);
  }
}
