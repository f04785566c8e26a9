import * as fs from "fs";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { setupBackend } from "./backend";
import { splitSamples } from "./data";
import { evaluate } from "./evaluate";
import { InferenceState, inferPlan, writePlan } from "./infer";
import { loadManifest } from "./manifest";
import { ModelSidecar, loadModel, saveModel } from "./model";
import { DEFAULT_TRAIN, train } from "./train";

async function cmdTrain(argv: {
  manifest: string; out: string; epochs: number; batchSize: number;
  lr: number; weightDecay: number; seed: number; split: number; quiet: boolean;
}): Promise<void> {
  const backend = await setupBackend();
  const ds = loadManifest(argv.manifest);
  console.log(
    `backend=${backend} samples=${ds.samples.length} m_theta=${ds.header.m_theta}`
  );
  const cfg = {
    ...DEFAULT_TRAIN,
    epochs: argv.epochs,
    batchSize: argv.batchSize,
    learningRate: argv.lr,
    weightDecay: argv.weightDecay,
    seed: argv.seed,
    trainFraction: argv.split,
    logEvery: argv.quiet ? undefined : 1,
  };
  const { model, log, modelConfig } = await train(ds, cfg);
  const sidecar: ModelSidecar = {
    model: modelConfig,
    normalization: ds.header.normalization,
    image_width: ds.header.image_width,
    image_height: ds.header.image_height,
    max_range: ds.header.max_range,
    lattice_r: ds.header.lattice_r,
    fov_h: ds.header.fov_h,
    t_e: ds.header.t_e,
  };
  await saveModel(model, argv.out, sidecar);
  fs.writeFileSync(
    `${argv.out}/loss_curve.json`,
    JSON.stringify(log, null, 2)
  );
  const last = log[log.length - 1];
  console.log(
    `trained ${log.length} epochs; final train loss ${last.trainLoss.toExponential(3)}` +
      (last.valLoss !== null ? `, val ${last.valLoss.toExponential(3)}` : "")
  );
}

async function cmdEval(argv: {
  manifest: string; weights: string; split: string; seed: number;
  splitFraction: number;
}): Promise<void> {
  await setupBackend();
  const ds = loadManifest(argv.manifest);
  const { model } = await loadModel(argv.weights);
  let subset = ds.samples;
  if (argv.split !== "all") {
    const { train: tr, val } = splitSamples(ds.samples, argv.splitFraction, argv.seed);
    subset = argv.split === "train" ? tr : val;
  }
  const metrics = evaluate(model, ds, subset);
  console.log(JSON.stringify(metrics, null, 2));
}

async function cmdInfer(argv: {
  weights: string; depth: string; state: string; out: string;
}): Promise<void> {
  await setupBackend();
  const { model, sidecar } = await loadModel(argv.weights);
  const state = JSON.parse(fs.readFileSync(argv.state, "utf-8")) as InferenceState;
  const plan = inferPlan(model, sidecar, argv.depth, state);
  writePlan(plan, argv.out);
  console.log(`plan -> ${argv.out}`);
}

export async function main(args: string[]): Promise<void> {
  await yargs(args)
    .command(
      "train",
      "fit the behavior-cloning model on an exported dataset",
      (y) =>
        y
          .option("manifest", { type: "string", demandOption: true })
          .option("out", { type: "string", demandOption: true })
          .option("epochs", { type: "number", default: DEFAULT_TRAIN.epochs })
          .option("batch-size", { type: "number", default: DEFAULT_TRAIN.batchSize })
          .option("lr", { type: "number", default: DEFAULT_TRAIN.learningRate })
          .option("weight-decay", {
            type: "number", default: DEFAULT_TRAIN.weightDecay,
          })
          .option("seed", { type: "number", default: 0 })
          .option("split", { type: "number", default: 0.8 })
          .option("quiet", { type: "boolean", default: false }),
      (argv) =>
        cmdTrain({
          manifest: argv.manifest, out: argv.out, epochs: argv.epochs,
          batchSize: argv["batch-size"], lr: argv.lr,
          weightDecay: argv["weight-decay"], seed: argv.seed,
          split: argv.split, quiet: argv.quiet,
        })
    )
    .command(
      "eval",
      "argmin-anchor agreement and per-channel MAE on a split",
      (y) =>
        y
          .option("manifest", { type: "string", demandOption: true })
          .option("weights", { type: "string", demandOption: true })
          .option("split", {
            type: "string", default: "val", choices: ["train", "val", "all"],
          })
          .option("split-fraction", { type: "number", default: 0.8 })
          .option("seed", { type: "number", default: 0 }),
      (argv) =>
        cmdEval({
          manifest: argv.manifest, weights: argv.weights, split: argv.split,
          seed: argv.seed, splitFraction: argv["split-fraction"],
        })
    )
    .command(
      "infer",
      "predict one frame and export an executable plan JSON",
      (y) =>
        y
          .option("weights", { type: "string", demandOption: true })
          .option("depth", { type: "string", demandOption: true })
          .option("state", { type: "string", demandOption: true })
          .option("out", { type: "string", demandOption: true }),
      (argv) =>
        cmdInfer({
          weights: argv.weights, depth: argv.depth,
          state: argv.state, out: argv.out,
        })
    )
    .demandCommand(1)
    .strict()
    .help()
    .parseAsync();
}

if (require.main === module) {
  main(hideBin(process.argv)).catch((err) => {
    console.error(err);
    process.exit(1);
  });
}
