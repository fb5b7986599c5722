/** Pure chart geometry for the live view: a value series plus actuator event markers. */

export interface SeriesPoint {
  t: number;
  v: number;
}

export interface EventMarker {
  t: number;
  on: boolean;
}

export interface ChartModel {
  width: number;
  height: number;
  tMin: number;
  tMax: number;
  vMin: number;
  vMax: number;
  /** SVG path ("M x y L x y ...") for the value series. */
  path: string;
  points: { x: number; y: number }[];
  markers: { x: number; on: boolean; t: number }[];
  gaps: { x: number }[];
}

const PAD = 4;

export function buildChartModel(
  series: SeriesPoint[],
  markers: EventMarker[],
  gaps: number[],
  width: number,
  height: number,
): ChartModel {
  const ts = [...series.map((p) => p.t), ...markers.map((m) => m.t), ...gaps];
  const tMin = ts.length > 0 ? Math.min(...ts) : 0;
  const tMax = ts.length > 0 ? Math.max(...ts) : 1;
  const vs = series.map((p) => p.v);
  const vMin = vs.length > 0 ? Math.min(0, ...vs) : 0;
  const vMax = vs.length > 0 ? Math.max(...vs) : 1;

  const tSpan = tMax - tMin || 1;
  const vSpan = vMax - vMin || 1;
  const toX = (t: number) => PAD + ((t - tMin) / tSpan) * (width - 2 * PAD);
  const toY = (v: number) => height - PAD - ((v - vMin) / vSpan) * (height - 2 * PAD);

  const points = series.map((p) => ({ x: round2(toX(p.t)), y: round2(toY(p.v)) }));
  const path = points.map((p, i) => `${i === 0 ? "M" : "L"} ${p.x} ${p.y}`).join(" ");
  return {
    width,
    height,
    tMin,
    tMax,
    vMin,
    vMax,
    path,
    points,
    markers: markers.map((m) => ({ x: round2(toX(m.t)), on: m.on, t: m.t })),
    gaps: gaps.map((t) => ({ x: round2(toX(t)) })),
  };
}

/** Minimum time gap between consecutive markers; Infinity for fewer than two. */
export function minMarkerSpacingMs(markers: EventMarker[]): number {
  let min = Infinity;
  for (let i = 1; i < markers.length; i++) {
    min = Math.min(min, markers[i].t - markers[i - 1].t);
  }
  return min;
}

function round2(value: number): number {
  return Math.round(value * 100) / 100;
}
