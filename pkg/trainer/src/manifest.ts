import * as crypto from "crypto";
import * as fs from "fs";
import * as path from "path";

export interface Normalization {
  v_max: number;
  g_max: number;
  p_n_max: number;
  p_theta_max: number;
  c_max: number;
}

export interface ManifestHeader {
  type: "header";
  version: number;
  m_theta: number;
  image_width: number;
  image_height: number;
  max_range: number;
  fov_h: number;
  fov_v: number;
  normalization: Normalization;
  lattice_r: number;
  t_e: number;
  samples: number;
  skipped: number;
}

export interface Sample {
  id: string;
  world: number;
  viewpoint: number;
  depth: string;
  depth_sha256: string;
  pose: { x: number; y: number; z: number; yaw: number };
  /** Normalized [v_x, v_y, g_x, g_y] in the body frame. */
  state: number[];
  /** m_theta rows of [p_n, p_theta, v_x, v_y, c], all normalized. */
  labels: number[][];
  j_t: number[];
  best_index: number;
}

export interface Dataset {
  root: string;
  header: ManifestHeader;
  samples: Sample[];
}

/** Load a manifest, verifying every referenced depth file's content hash. */
export function loadManifest(file: string, verifyHashes = true): Dataset {
  const root = path.dirname(file);
  const lines = fs.readFileSync(file, "utf-8").split("\n").filter((l) => l.length > 0);
  if (lines.length === 0) throw new Error(`${file}: empty manifest`);
  const header = JSON.parse(lines[0]) as ManifestHeader;
  if (header.type !== "header") throw new Error(`${file}: missing header line`);
  const samples: Sample[] = [];
  const checked = new Map<string, string>();
  for (const line of lines.slice(1)) {
    const sample = JSON.parse(line) as Sample;
    if (verifyHashes) {
      let digest = checked.get(sample.depth);
      if (digest === undefined) {
        const blob = fs.readFileSync(path.join(root, sample.depth));
        digest = crypto.createHash("sha256").update(blob).digest("hex");
        checked.set(sample.depth, digest);
      }
      if (digest !== sample.depth_sha256) {
        throw new Error(`corrupt sample ${sample.id}: hash mismatch on ${sample.depth}`);
      }
    }
    samples.push(sample);
  }
  return { root, header, samples };
}
