import * as tf from "@tensorflow/tfjs";

import { makeBatch } from "./data";
import { Dataset, Sample } from "./manifest";

export interface EvalMetrics {
  /** Fraction of samples whose predicted argmin-cost anchor matches the label's. */
  argminAgreement: number;
  /** Mean absolute error per output channel, normalized units. */
  channelMae: { p_n: number; p_theta: number; v_x: number; v_y: number; c: number };
  samples: number;
}

export function evaluate(
  model: tf.LayersModel,
  ds: Dataset,
  samples?: Sample[]
): EvalMetrics {
  const subset = samples ?? ds.samples;
  if (subset.length === 0) throw new Error("cannot evaluate an empty split");
  const m = ds.header.m_theta;
  let agree = 0;
  const absSum = [0, 0, 0, 0, 0];
  const chunk = 256;
  for (let i = 0; i < subset.length; i += chunk) {
    const part = subset.slice(i, i + chunk);
    const batch = makeBatch(ds, part);
    const pred = tf.tidy(
      () => model.predict([batch.images, batch.states]) as tf.Tensor4D
    );
    const predData = pred.dataSync();
    const labelData = batch.labels.dataSync();
    for (let s = 0; s < part.length; s++) {
      let bestPred = 0;
      let bestLabel = 0;
      for (let a = 0; a < m; a++) {
        const base = s * m * 5 + a * 5;
        if (predData[base + 4] < predData[bestPred * 5 + s * m * 5 + 4]) bestPred = a;
        if (labelData[base + 4] < labelData[bestLabel * 5 + s * m * 5 + 4]) {
          bestLabel = a;
        }
        for (let c = 0; c < 5; c++) {
          absSum[c] += Math.abs(predData[base + c] - labelData[base + c]);
        }
      }
      if (bestPred === bestLabel) agree++;
    }
    pred.dispose();
    batch.images.dispose();
    batch.states.dispose();
    batch.labels.dispose();
  }
  const denom = subset.length * m;
  return {
    argminAgreement: agree / subset.length,
    channelMae: {
      p_n: absSum[0] / denom,
      p_theta: absSum[1] / denom,
      v_x: absSum[2] / denom,
      v_y: absSum[3] / denom,
      c: absSum[4] / denom,
    },
    samples: subset.length,
  };
}
