import { execFileSync } from "child_process";
import * as tf from "@tensorflow/tfjs";
import * as fs from "fs";
import * as os from "os";
import * as path from "path";
import { beforeAll, describe, expect, it } from "vitest";

import { setupBackend } from "../src/backend";
import { depthToUnit } from "../src/data";
import { encodeState, inferPlan, predictAnchors, writePlan } from "../src/infer";
import { loadManifest } from "../src/manifest";
import { DEFAULT_MODEL, ModelSidecar, buildModel } from "../src/model";
import { readPgm16 } from "../src/pgm";

const SMALL = path.resolve(__dirname, "..", ".fixtures", "ds-small", "manifest.jsonl");
const PYTHON = process.env.FORESTNAV_PYTHON ?? "python3";

let sidecar: ModelSidecar;
let model: tf.LayersModel;

beforeAll(async () => {
  await setupBackend();
  const ds = loadManifest(SMALL, false);
  sidecar = {
    model: { mTheta: ds.header.m_theta, seed: 5, ...DEFAULT_MODEL },
    normalization: ds.header.normalization,
    image_width: ds.header.image_width,
    image_height: ds.header.image_height,
    max_range: ds.header.max_range,
    lattice_r: ds.header.lattice_r,
    fov_h: ds.header.fov_h,
    t_e: ds.header.t_e,
  };
  model = buildModel(sidecar.model);
});

describe("inferPlan", () => {
  it("exports a plan the executor's schema validator accepts", () => {
    const ds = loadManifest(SMALL, false);
    const sample = ds.samples[0];
    const out = path.join(fs.mkdtempSync(path.join(os.tmpdir(), "fn-plan-")), "plan.json");
    const plan = inferPlan(model, sidecar, path.join(ds.root, sample.depth), {
      pose: { x: sample.pose.x, y: sample.pose.y, yaw: sample.pose.yaw },
      v_s: [0.8, 0.1],
      goal: [sample.pose.x + 9.0, sample.pose.y + 1.0],
    });
    writePlan(plan, out);
    // Round trip through the executor-side validator.
    execFileSync(PYTHON, ["-m", "forestnav.cli", "validate-plan", out], {
      stdio: "pipe",
    });
    const doc = JSON.parse(fs.readFileSync(out, "utf-8"));
    expect(doc.anchors.length).toBe(sidecar.model.mTheta);
    expect(doc.best_index).toBeGreaterThanOrEqual(0);
    expect(doc.trajectory.t_e).toBe(sidecar.t_e);
  });

  it("denormalized outputs stay inside their physical ranges", () => {
    const ds = loadManifest(SMALL, false);
    const sample = ds.samples[1];
    const img = readPgm16(path.join(ds.root, sample.depth));
    const image = depthToUnit(img.data, sidecar.max_range);
    const state = encodeState(sidecar, {
      pose: { x: 0, y: 0, yaw: 0.3 },
      v_s: [1.0, 0.0],
      goal: [5.0, 5.0],
    });
    const anchors = predictAnchors(model, sidecar, image, state);
    const n = sidecar.normalization;
    for (const a of anchors) {
      expect(a.p_n).toBeGreaterThanOrEqual(0);
      expect(a.p_n).toBeLessThanOrEqual(n.p_n_max);
      expect(Math.abs(a.p_theta)).toBeLessThanOrEqual(n.p_theta_max);
      expect(Math.abs(a.v_e_body[0])).toBeLessThanOrEqual(n.v_max);
      expect(a.c).toBeGreaterThanOrEqual(0);
      expect(a.c).toBeLessThanOrEqual(n.c_max);
    }
  });

  it("batch inference equals per-sample inference", () => {
    const ds = loadManifest(SMALL, false);
    const h = ds.header.image_height;
    const w = ds.header.image_width;
    const images = ds.samples.slice(0, 4).map((s) =>
      depthToUnit(readPgm16(path.join(ds.root, s.depth)).data, ds.header.max_range)
    );
    const states = ds.samples.slice(0, 4).map((s) => Float32Array.from(s.state));

    const flat = new Float32Array(4 * h * w);
    images.forEach((img, i) => flat.set(img, i * h * w));
    const flatState = new Float32Array(4 * 4);
    states.forEach((s, i) => flatState.set(s, i * 4));
    const batchOut = (model.predict([
      tf.tensor4d(flat, [4, h, w, 1]),
      tf.tensor2d(flatState, [4, 4]),
    ]) as tf.Tensor4D).dataSync();

    for (let i = 0; i < 4; i++) {
      const single = (model.predict([
        tf.tensor4d(images[i], [1, h, w, 1]),
        tf.tensor2d(states[i], [1, 4]),
      ]) as tf.Tensor4D).dataSync();
      for (let k = 0; k < single.length; k++) {
        expect(Math.abs(single[k] - batchOut[i * single.length + k])).toBeLessThan(1e-6);
      }
    }
  });
});
