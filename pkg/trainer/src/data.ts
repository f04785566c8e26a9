import * as tf from "@tensorflow/tfjs";
import * as path from "path";

import { Dataset, Sample } from "./manifest";
import { readPgm16 } from "./pgm";

export interface Batch {
  /** [n, height, width, 1] depth in [0, 1] (invalid pixels read as far). */
  images: tf.Tensor4D;
  /** [n, 4] normalized state. */
  states: tf.Tensor2D;
  /** [n, 1, m_theta, 5] normalized labels. */
  labels: tf.Tensor4D;
}

/** Depth preprocessing: millimeters to [0, 1] range, invalid pixels -> 1. */
export function depthToUnit(data: Uint16Array, maxRangeM: number): Float32Array {
  const out = new Float32Array(data.length);
  const maxMm = maxRangeM * 1000.0;
  for (let i = 0; i < data.length; i++) {
    const mm = data[i];
    out[i] = mm === 0 ? 1.0 : Math.min(mm / maxMm, 1.0);
  }
  return out;
}

export function loadSampleArrays(ds: Dataset, sample: Sample): {
  image: Float32Array;
  state: Float32Array;
  label: Float32Array;
} {
  const img = readPgm16(path.join(ds.root, sample.depth));
  if (img.width !== ds.header.image_width || img.height !== ds.header.image_height) {
    throw new Error(`sample ${sample.id}: image is ${img.width}x${img.height}`);
  }
  const label = new Float32Array(ds.header.m_theta * 5);
  for (let a = 0; a < ds.header.m_theta; a++) {
    for (let c = 0; c < 5; c++) label[a * 5 + c] = sample.labels[a][c];
  }
  return {
    image: depthToUnit(img.data, ds.header.max_range),
    state: Float32Array.from(sample.state),
    label,
  };
}

/** Stack a list of samples into training tensors. */
export function makeBatch(ds: Dataset, samples: Sample[]): Batch {
  const h = ds.header.image_height;
  const w = ds.header.image_width;
  const m = ds.header.m_theta;
  const n = samples.length;
  const images = new Float32Array(n * h * w);
  const states = new Float32Array(n * 4);
  const labels = new Float32Array(n * m * 5);
  samples.forEach((sample, i) => {
    const arrays = loadSampleArrays(ds, sample);
    images.set(arrays.image, i * h * w);
    states.set(arrays.state, i * 4);
    labels.set(arrays.label, i * m * 5);
  });
  return {
    images: tf.tensor4d(images, [n, h, w, 1]),
    states: tf.tensor2d(states, [n, 4]),
    labels: tf.tensor4d(labels, [n, 1, m, 5]),
  };
}

/** Deterministic shuffle/split driven by a small LCG, not Math.random. */
export class Rng {
  private state: number;

  constructor(seed: number) {
    this.state = (seed >>> 0) || 1;
  }

  next(): number {
    // Numerical Recipes LCG; plenty for shuffling and splits.
    this.state = (Math.imul(this.state, 1664525) + 1013904223) >>> 0;
    return this.state / 0x100000000;
  }

  shuffle<T>(items: T[]): T[] {
    const out = items.slice();
    for (let i = out.length - 1; i > 0; i--) {
      const j = Math.floor(this.next() * (i + 1));
      [out[i], out[j]] = [out[j], out[i]];
    }
    return out;
  }
}

export function splitSamples(
  samples: Sample[],
  trainFraction: number,
  seed: number
): { train: Sample[]; val: Sample[] } {
  if (!(trainFraction > 0 && trainFraction < 1)) {
    throw new Error(`train fraction must be in (0, 1), got ${trainFraction}`);
  }
  const shuffled = new Rng(seed).shuffle(samples);
  const cut = Math.max(1, Math.round(shuffled.length * trainFraction));
  return { train: shuffled.slice(0, cut), val: shuffled.slice(cut) };
}
