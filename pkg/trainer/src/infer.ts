import * as tf from "@tensorflow/tfjs";
import * as fs from "fs";

import { depthToUnit } from "./data";
import { ModelSidecar } from "./model";
import { readPgm16 } from "./pgm";

export interface InferenceState {
  pose: { x: number; y: number; yaw: number };
  /** World-frame current velocity. */
  v_s: [number, number];
  /** World-frame goal position. */
  goal: [number, number];
}

export interface AnchorPrediction {
  index: number;
  p_n: number;
  p_theta: number;
  v_e_body: [number, number];
  c: number;
}

function rot(yaw: number, v: [number, number]): [number, number] {
  const c = Math.cos(yaw);
  const s = Math.sin(yaw);
  return [c * v[0] - s * v[1], s * v[0] + c * v[1]];
}

export function anchorAngle(sidecar: ModelSidecar, i: number): number {
  const m = sidecar.model.mTheta;
  return -0.5 * sidecar.fov_h + ((i + 0.5) * sidecar.fov_h) / m;
}

/** Normalized network input [v_body/v_max, g_body/g_max] for a world state. */
export function encodeState(sidecar: ModelSidecar, state: InferenceState): Float32Array {
  const n = sidecar.normalization;
  const vBody = rot(-state.pose.yaw, state.v_s);
  const dx = state.goal[0] - state.pose.x;
  const dy = state.goal[1] - state.pose.y;
  const dist = Math.hypot(dx, dy);
  // The objective consumes a direction at fixed range; mirror that here.
  const scale = dist > 0 ? n.g_max / dist : 0.0;
  const gBody = rot(-state.pose.yaw, [dx * scale, dy * scale]);
  const clamp = (x: number) => Math.max(-1, Math.min(1, x));
  return Float32Array.from([
    clamp(vBody[0] / n.v_max),
    clamp(vBody[1] / n.v_max),
    clamp(gBody[0] / n.g_max),
    clamp(gBody[1] / n.g_max),
  ]);
}

export function predictAnchors(
  model: tf.LayersModel,
  sidecar: ModelSidecar,
  image: Float32Array,
  state: Float32Array
): AnchorPrediction[] {
  const n = sidecar.normalization;
  const m = sidecar.model.mTheta;
  const out = tf.tidy(() => {
    const img = tf.tensor4d(image, [1, sidecar.image_height, sidecar.image_width, 1]);
    const st = tf.tensor2d(state, [1, 4]);
    const pred = model.predict([img, st]) as tf.Tensor4D;
    return pred.dataSync();
  });
  const anchors: AnchorPrediction[] = [];
  for (let a = 0; a < m; a++) {
    anchors.push({
      index: a,
      p_n: out[a * 5] * n.p_n_max,
      p_theta: out[a * 5 + 1] * n.p_theta_max,
      v_e_body: [out[a * 5 + 2] * n.v_max, out[a * 5 + 3] * n.v_max],
      c: out[a * 5 + 4] * n.c_max,
    });
  }
  return anchors;
}

/**
 * Run the network on one frame and emit a plan document in the executor's
 * schema: per-anchor world-frame end states with costs, the argmin-cost
 * anchor marked best, and the corresponding trajectory control points.
 * Predictions carry no raw objective value, so j_t mirrors the clipped cost.
 */
export function inferPlan(
  model: tf.LayersModel,
  sidecar: ModelSidecar,
  depthFile: string,
  state: InferenceState
): object {
  const img = readPgm16(depthFile);
  if (img.width !== sidecar.image_width || img.height !== sidecar.image_height) {
    throw new Error(
      `depth image is ${img.width}x${img.height}, model expects ` +
        `${sidecar.image_width}x${sidecar.image_height}`
    );
  }
  const image = depthToUnit(img.data, sidecar.max_range);
  const anchors = predictAnchors(model, sidecar, image, encodeState(sidecar, state));

  const { x, y, yaw } = state.pose;
  const world = anchors.map((a) => {
    const ang = anchorAngle(sidecar, a.index) + a.p_theta;
    const body: [number, number] = [
      a.p_n * Math.cos(ang),
      a.p_n * Math.sin(ang),
    ];
    const pWorld = rot(yaw, body);
    const vWorld = rot(yaw, a.v_e_body);
    return {
      index: a.index,
      p_e: [x + pWorld[0], y + pWorld[1]],
      v_e: [vWorld[0], vWorld[1]],
      j_t: a.c,
      c: a.c,
      feasible: true,
      converged: true,
    };
  });
  let best = 0;
  anchors.forEach((a, i) => {
    if (a.c < anchors[best].c) best = i;
  });
  return {
    pose: { x, y, yaw },
    goal: [state.goal[0], state.goal[1]],
    anchors: world,
    best_index: best,
    trajectory: {
      p_s: [x, y],
      v_s: [state.v_s[0], state.v_s[1]],
      v_e: world[best].v_e,
      p_e: world[best].p_e,
      t_e: sidecar.t_e,
    },
  };
}

export function writePlan(plan: object, out: string): void {
  fs.writeFileSync(out, JSON.stringify(plan, null, 2));
}
