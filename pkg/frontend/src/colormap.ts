/**
 * Dark-blue-to-red strain colormap.
 *
 * Per-element scalar fields (energy densities) are mapped onto
 * [0, max(field)] per fetch; an all-zero field therefore renders as a
 * uniform dark blue. The ramp interpolates through a small set of
 * anchor colors chosen for monotonically increasing perceived intensity.
 */

export type Rgb = [number, number, number];

const ANCHORS: Rgb[] = [
  [13, 8, 135], // dark blue
  [84, 2, 163],
  [156, 23, 158],
  [216, 70, 107],
  [244, 136, 73],
  [237, 217, 48],
  [220, 20, 20], // red
];

/** Interpolate the ramp at t in [0, 1]; out-of-range values clamp. */
export function rampColor(t: number): Rgb {
  const u = Math.min(1, Math.max(0, t));
  const s = u * (ANCHORS.length - 1);
  const i = Math.min(ANCHORS.length - 2, Math.floor(s));
  const f = s - i;
  const a = ANCHORS[i];
  const b = ANCHORS[i + 1];
  return [
    Math.round(a[0] + f * (b[0] - a[0])),
    Math.round(a[1] + f * (b[1] - a[1])),
    Math.round(a[2] + f * (b[2] - a[2])),
  ];
}

export interface ColormapResult {
  colors: Rgb[];
  /** Display range for the legend: [0, max(field)] (max 0 for a zero field). */
  range: [number, number];
}

/** Color a per-element scalar field with the [0, max] normalization. */
export function colorField(field: number[]): ColormapResult {
  let max = 0;
  for (const v of field) {
    if (v > max) max = v;
  }
  const colors = field.map((v) => rampColor(max > 0 ? v / max : 0));
  return { colors, range: [0, max] };
}
