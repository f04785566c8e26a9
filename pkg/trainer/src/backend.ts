import * as tf from "@tensorflow/tfjs";
import * as path from "path";

import { registerMissingWasmKernels } from "./grads";

let ready: Promise<string> | null = null;

/** Select the fastest available backend (wasm, falling back to plain cpu). */
export function setupBackend(): Promise<string> {
  if (ready !== null) return ready;
  ready = (async () => {
    const preferred = process.env.FORESTNAV_TFJS_BACKEND ?? "wasm";
    if (preferred === "wasm") {
      try {
        // eslint-disable-next-line @typescript-eslint/no-var-requires
        const wasm = require("@tensorflow/tfjs-backend-wasm");
        const dist = path.dirname(
          require.resolve("@tensorflow/tfjs-backend-wasm/package.json")
        );
        wasm.setWasmPaths(path.join(dist, "dist") + path.sep);
        await tf.setBackend("wasm");
        await tf.ready();
        registerMissingWasmKernels();
        return tf.getBackend();
      } catch {
        // fall through to cpu
      }
    }
    await tf.setBackend("cpu");
    await tf.ready();
    return tf.getBackend();
  })();
  return ready;
}
