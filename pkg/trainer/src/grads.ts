import * as tf from "@tensorflow/tfjs";

/**
 * The wasm backend ships no Conv2DBackpropFilter kernel, which blocks
 * training.  The filter gradient is itself a convolution: with the input
 * transposed to put channels on the batch axis and the output gradient used
 * as a stride-dilated filter, a plain forward conv2d produces dW.  Register
 * that composition as the missing kernel so every gradient path (plain and
 * fused) trains on wasm's fast forward kernels.
 */
export function registerMissingWasmKernels(): void {
  if (tf.getKernel("Conv2DBackpropFilter", "wasm") != null) {
    return;
  }
  tf.registerKernel({
    kernelName: "Conv2DBackpropFilter",
    backendName: "wasm",
    kernelFunc: ({ inputs, attrs }) => {
      // Materialize proper tensor handles via the Identity kernel; they own
      // a reference of their own, so scope cleanup cannot free the inputs.
      const engine = tf.engine();
      const x = engine.runKernel(
        "Identity", { x: inputs.x } as unknown as tf.NamedTensorMap
      ) as tf.Tensor4D;
      const dy = engine.runKernel(
        "Identity", { x: inputs.dy } as unknown as tf.NamedTensorMap
      ) as tf.Tensor4D;
      const a = attrs as unknown as {
        strides: [number, number] | number;
        pad: "valid" | "same" | number;
        dataFormat: string;
        dimRoundingMode?: "floor" | "round" | "ceil";
        filterShape: [number, number, number, number];
      };
      if (a.dataFormat !== "NHWC") {
        throw new Error("composite Conv2DBackpropFilter supports NHWC only");
      }
      // No tidy/dispose here: the engine's kernel scope owns every
      // intermediate tensor the composition creates.
      return filterGradViaConv(x, dy, a.filterShape, a.strides, a.pad);
    },
  });
}

/** dW for conv2d computed with a forward conv: see registerMissingWasmKernels. */
export function filterGradViaConv(
  x: tf.Tensor4D,
  dy: tf.Tensor4D,
  filterShape: [number, number, number, number],
  strides: [number, number] | number,
  pad: "valid" | "same" | number
): tf.Tensor4D {
  const [kh, kw, ci, co] = filterShape;
  const info = tf.backend_util.computeConv2DInfo(
    x.shape as [number, number, number, number],
    filterShape,
    strides,
    1,
    pad
  );
  const sh = info.strideHeight;
  const sw = info.strideWidth;
  const h = x.shape[1];
  const w = x.shape[2];
  const oh = dy.shape[1];
  const ow = dy.shape[2];
  // Residual bottom/right padding so a valid conv emits at least kh x kw.
  const padBottom = kh + (oh - 1) * sh - h - info.padInfo.top;
  const padRight = kw + (ow - 1) * sw - w - info.padInfo.left;
  const xT = tf.transpose(x, [3, 1, 2, 0]); // [Ci, H, W, B]
  const padded = tf.pad(xT, [
    [0, 0],
    [info.padInfo.top, Math.max(padBottom, 0)],
    [info.padInfo.left, Math.max(padRight, 0)],
    [0, 0],
  ]);
  const dyT = tf.transpose(dy, [1, 2, 0, 3]); // [OH, OW, B, Co] as filter
  const z = tf.conv2d(
    padded as tf.Tensor4D,
    dyT as tf.Tensor4D,
    1,
    "valid",
    "NHWC",
    [sh, sw]
  ); // [Ci, >=kh, >=kw, Co]
  const cropped = tf.slice(z, [0, 0, 0, 0], [ci, kh, kw, co]);
  return tf.transpose(cropped, [1, 2, 0, 3]) as tf.Tensor4D;
}
