import * as tf from "@tensorflow/tfjs";
import * as fs from "fs";
import * as path from "path";

import { Normalization } from "./manifest";

export interface ModelConfig {
  mTheta: number;
  imageHeight: number; // 32
  featureChannels: number[]; // per-block output channels
  stateChannels: number;
  seed: number;
}

export const DEFAULT_MODEL: Omit<ModelConfig, "mTheta" | "seed"> = {
  imageHeight: 32,
  featureChannels: [16, 24, 32, 48, 64],
  stateChannels: 16,
};

/** Sidecar stored next to the weights so inference is self-describing. */
export interface ModelSidecar {
  model: ModelConfig;
  normalization: Normalization;
  image_width: number;
  image_height: number;
  max_range: number;
  lattice_r: number;
  fov_h: number;
  t_e: number;
}

/** Broadcast the 1x1 state feature across the anchor columns. */
export class TileColumns extends tf.layers.Layer {
  static className = "TileColumns";
  private columns: number;

  constructor(config: { columns: number; name?: string }) {
    super(config as object);
    this.columns = config.columns;
  }

  computeOutputShape(inputShape: tf.Shape): tf.Shape {
    return [inputShape[0], inputShape[1], this.columns, inputShape[3]];
  }

  call(inputs: tf.Tensor | tf.Tensor[]): tf.Tensor {
    const x = Array.isArray(inputs) ? inputs[0] : inputs;
    return tf.tile(x, [1, 1, this.columns, 1]);
  }

  getConfig(): tf.serialization.ConfigDict {
    return { ...super.getConfig(), columns: this.columns };
  }
}
tf.serialization.registerClass(TileColumns);

/**
 * Bound each output channel onto its normalized range: sigmoid for the
 * offset norm (ch 0) and cost (ch 4), tanh for the offset angle and the
 * two velocity components (ch 1..3).
 */
export class HeadActivation extends tf.layers.Layer {
  static className = "HeadActivation";

  computeOutputShape(inputShape: tf.Shape): tf.Shape {
    return inputShape;
  }

  call(inputs: tf.Tensor | tf.Tensor[]): tf.Tensor {
    const x = Array.isArray(inputs) ? inputs[0] : inputs;
    return tf.tidy(() => {
      const pn = tf.sigmoid(tf.slice(x, [0, 0, 0, 0], [-1, -1, -1, 1]));
      const mid = tf.tanh(tf.slice(x, [0, 0, 0, 1], [-1, -1, -1, 3]));
      const cost = tf.sigmoid(tf.slice(x, [0, 0, 0, 4], [-1, -1, -1, 1]));
      return tf.concat([pn, mid, cost], 3);
    });
  }
}
tf.serialization.registerClass(HeadActivation);

function convBn(
  x: tf.SymbolicTensor,
  filters: number,
  stride: number,
  seed: () => number,
  name: string
): tf.SymbolicTensor {
  const conv = tf.layers
    .conv2d({
      filters,
      kernelSize: 3,
      strides: stride,
      padding: "same",
      useBias: false,
      kernelInitializer: tf.initializers.heNormal({ seed: seed() }),
      name: `${name}_conv`,
    })
    .apply(x) as tf.SymbolicTensor;
  return tf.layers
    .batchNormalization({ name: `${name}_bn` })
    .apply(conv) as tf.SymbolicTensor;
}

function residualBlock(
  x: tf.SymbolicTensor,
  filters: number,
  seed: () => number,
  name: string
): tf.SymbolicTensor {
  const main1 = tf.layers
    .reLU({ name: `${name}_relu1` })
    .apply(convBn(x, filters, 2, seed, `${name}_a`)) as tf.SymbolicTensor;
  const main2 = convBn(main1, filters, 1, seed, `${name}_b`);
  const skip = tf.layers
    .conv2d({
      filters,
      kernelSize: 1,
      strides: 2,
      padding: "same",
      useBias: false,
      kernelInitializer: tf.initializers.heNormal({ seed: seed() }),
      name: `${name}_skip`,
    })
    .apply(x) as tf.SymbolicTensor;
  const added = tf.layers
    .add({ name: `${name}_add` })
    .apply([main2, skip]) as tf.SymbolicTensor;
  return tf.layers.reLU({ name: `${name}_out` }).apply(added) as tf.SymbolicTensor;
}

/**
 * Reduced-depth residual extractor: 32*mTheta x 32 depth image down to an
 * mTheta x 1 feature row, fused with a 1x1-convolved state vector, then a
 * three-convolution head with per-channel bounded activations.
 */
export function buildModel(cfg: ModelConfig): tf.LayersModel {
  const width = 32 * cfg.mTheta;
  if (cfg.imageHeight !== 32) {
    throw new Error(`image height must be 32, got ${cfg.imageHeight}`);
  }
  let counter = cfg.seed;
  const seed = () => counter++;

  const image = tf.input({ shape: [cfg.imageHeight, width, 1], name: "depth" });
  const state = tf.input({ shape: [4], name: "state" });

  const [stemChannels, ...blockChannels] = cfg.featureChannels;
  let x = tf.layers
    .reLU({ name: "stem_relu" })
    .apply(
      convBn(image as tf.SymbolicTensor, stemChannels, 2, seed, "stem")
    ) as tf.SymbolicTensor;
  blockChannels.forEach((filters, i) => {
    x = residualBlock(x, filters, seed, `block${i + 1}`);
  });
  // x is now [batch, 1, mTheta, C].

  let s = tf.layers
    .reshape({ targetShape: [1, 1, 4], name: "state_grid" })
    .apply(state) as tf.SymbolicTensor;
  s = tf.layers
    .conv2d({
      filters: cfg.stateChannels,
      kernelSize: 1,
      activation: "relu",
      kernelInitializer: tf.initializers.heNormal({ seed: seed() }),
      name: "state_conv",
    })
    .apply(s) as tf.SymbolicTensor;
  s = new TileColumns({ columns: cfg.mTheta, name: "state_tile" }).apply(
    s
  ) as tf.SymbolicTensor;

  let head = tf.layers
    .concatenate({ axis: 3, name: "fuse" })
    .apply([x, s]) as tf.SymbolicTensor;
  head = tf.layers
    .conv2d({
      filters: 64, kernelSize: 1, activation: "relu",
      kernelInitializer: tf.initializers.heNormal({ seed: seed() }),
      name: "head1",
    })
    .apply(head) as tf.SymbolicTensor;
  head = tf.layers
    .conv2d({
      filters: 64, kernelSize: 1, activation: "relu",
      kernelInitializer: tf.initializers.heNormal({ seed: seed() }),
      name: "head2",
    })
    .apply(head) as tf.SymbolicTensor;
  head = tf.layers
    .conv2d({
      filters: 5, kernelSize: 1,
      kernelInitializer: tf.initializers.glorotUniform({ seed: seed() }),
      name: "head3",
    })
    .apply(head) as tf.SymbolicTensor;
  const out = new HeadActivation({ name: "bounded" }).apply(
    head
  ) as tf.SymbolicTensor;

  return tf.model({ inputs: [image, state], outputs: out, name: "bc_planner" });
}

// --- native-format persistence (model.json + weights.bin + sidecar) -------

export async function saveModel(
  model: tf.LayersModel,
  dir: string,
  sidecar: ModelSidecar
): Promise<void> {
  fs.mkdirSync(dir, { recursive: true });
  await model.save(
    tf.io.withSaveHandler(async (artifacts) => {
      const weightsData = artifacts.weightData as ArrayBuffer;
      fs.writeFileSync(path.join(dir, "weights.bin"), Buffer.from(weightsData));
      const doc = {
        modelTopology: artifacts.modelTopology,
        format: "layers-model",
        generatedBy: "forestnav-trainer",
        weightsManifest: [
          { paths: ["weights.bin"], weights: artifacts.weightSpecs },
        ],
      };
      fs.writeFileSync(path.join(dir, "model.json"), JSON.stringify(doc));
      return {
        modelArtifactsInfo: {
          dateSaved: new Date(),
          modelTopologyType: "JSON" as const,
        },
      };
    })
  );
  fs.writeFileSync(
    path.join(dir, "model_config.json"),
    JSON.stringify(sidecar, null, 2)
  );
}

export async function loadModel(
  dir: string
): Promise<{ model: tf.LayersModel; sidecar: ModelSidecar }> {
  const doc = JSON.parse(fs.readFileSync(path.join(dir, "model.json"), "utf-8"));
  const raw = fs.readFileSync(path.join(dir, "weights.bin"));
  const weightData = raw.buffer.slice(
    raw.byteOffset,
    raw.byteOffset + raw.byteLength
  );
  const model = await tf.loadLayersModel(
    tf.io.fromMemory({
      modelTopology: doc.modelTopology,
      weightSpecs: doc.weightsManifest[0].weights,
      weightData,
    })
  );
  const sidecar = JSON.parse(
    fs.readFileSync(path.join(dir, "model_config.json"), "utf-8")
  ) as ModelSidecar;
  return { model, sidecar };
}
