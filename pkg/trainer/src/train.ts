import * as tf from "@tensorflow/tfjs";

import { Batch, Rng, makeBatch, splitSamples } from "./data";
import { Dataset, Sample } from "./manifest";
import { DEFAULT_MODEL, ModelConfig, buildModel } from "./model";

export interface TrainConfig {
  learningRate: number;
  weightDecay: number;
  batchSize: number;
  epochs: number;
  seed: number;
  trainFraction: number;
  /** Stop once train loss falls below this fraction of the initial loss. */
  targetLossFraction?: number;
  logEvery?: number;
}

export const DEFAULT_TRAIN: TrainConfig = {
  learningRate: 1e-3,
  weightDecay: 1e-4,
  batchSize: 32,
  epochs: 60,
  seed: 0,
  trainFraction: 0.8,
};

export interface EpochLog {
  epoch: number;
  trainLoss: number;
  valLoss: number | null;
}

/** Mean over samples of the squared label-error norm (all anchors jointly). */
export function lossOn(model: tf.LayersModel, batch: Batch): number {
  return tf.tidy(() => {
    const pred = model.predict([batch.images, batch.states]) as tf.Tensor4D;
    return sampleMseValue(pred, batch.labels);
  });
}

function sampleMseValue(pred: tf.Tensor4D, labels: tf.Tensor4D): number {
  const perSample = tf.sum(tf.squaredDifference(pred, labels), [1, 2, 3]);
  return tf.mean(perSample).dataSync()[0];
}

function sampleMse(pred: tf.Tensor, labels: tf.Tensor): tf.Scalar {
  const perSample = tf.sum(tf.squaredDifference(pred, labels), [1, 2, 3]);
  return tf.mean(perSample);
}

/**
 * Minimize the mean squared label error with decoupled weight decay
 * (Adam step, then kernels shrink by lr * decay).  Deterministic for a
 * fixed seed: initializer seeds, shuffle order, and batch composition all
 * derive from it.
 */
export async function train(
  ds: Dataset,
  cfg: TrainConfig,
  modelCfg?: Partial<ModelConfig>
): Promise<{ model: tf.LayersModel; log: EpochLog[]; modelConfig: ModelConfig }> {
  const mc: ModelConfig = {
    mTheta: ds.header.m_theta,
    imageHeight: ds.header.image_height,
    featureChannels: modelCfg?.featureChannels ?? DEFAULT_MODEL.featureChannels,
    stateChannels: modelCfg?.stateChannels ?? DEFAULT_MODEL.stateChannels,
    seed: cfg.seed,
  };
  const model = buildModel(mc);
  const optimizer = tf.train.adam(cfg.learningRate);
  const decayed = model.trainableWeights
    .filter((w) => w.name.includes("kernel"))
    .map((w) => w.read() as tf.Variable);

  let train: Sample[];
  let val: Sample[];
  if (cfg.trainFraction >= 1.0) {
    train = ds.samples.slice();
    val = [];
  } else {
    ({ train, val } = splitSamples(ds.samples, cfg.trainFraction, cfg.seed));
  }
  const valBatch = val.length > 0 ? makeBatch(ds, val) : null;
  const rng = new Rng(cfg.seed + 1);

  // Batches are materialized per epoch to keep memory flat on big sets.
  const log: EpochLog[] = [];
  let initialLoss: number | null = null;
  for (let epoch = 0; epoch < cfg.epochs; epoch++) {
    const order = rng.shuffle(train);
    let epochLoss = 0;
    let seen = 0;
    for (let i = 0; i < order.length; i += cfg.batchSize) {
      const chunk = order.slice(i, i + cfg.batchSize);
      const batch = makeBatch(ds, chunk);
      const lossScalar = optimizer.minimize(
        () =>
          sampleMse(
            model.apply([batch.images, batch.states], { training: true }) as tf.Tensor,
            batch.labels
          ),
        true
      ) as tf.Scalar;
      const lossValue = lossScalar.dataSync()[0];
      lossScalar.dispose();
      if (cfg.weightDecay > 0) {
        const shrink = 1.0 - cfg.learningRate * cfg.weightDecay;
        tf.tidy(() => {
          for (const w of decayed) w.assign(w.mul(shrink));
        });
      }
      epochLoss += lossValue * chunk.length;
      seen += chunk.length;
      batch.images.dispose();
      batch.states.dispose();
      batch.labels.dispose();
    }
    const trainLoss = epochLoss / Math.max(seen, 1);
    if (initialLoss === null) initialLoss = trainLoss;
    const valLoss = valBatch ? lossOn(model, valBatch) : null;
    log.push({ epoch, trainLoss, valLoss });
    if (cfg.logEvery && epoch % cfg.logEvery === 0) {
      console.log(
        `epoch ${epoch}: train ${trainLoss.toExponential(3)}` +
          (valLoss !== null ? ` val ${valLoss.toExponential(3)}` : "")
      );
    }
    if (
      cfg.targetLossFraction !== undefined &&
      trainLoss < cfg.targetLossFraction * initialLoss
    ) {
      break;
    }
  }
  if (valBatch) {
    valBatch.images.dispose();
    valBatch.states.dispose();
    valBatch.labels.dispose();
  }
  optimizer.dispose();
  return { model, log, modelConfig: mc };
}
