import * as fs from "fs";
import * as os from "os";
import * as path from "path";
import { describe, expect, it } from "vitest";

import { Rng, depthToUnit, splitSamples } from "../src/data";
import { loadManifest } from "../src/manifest";
import { readPgm16, writePgm16 } from "../src/pgm";

const SMALL = path.resolve(__dirname, "..", ".fixtures", "ds-small", "manifest.jsonl");

describe("pgm", () => {
  it("round-trips 16-bit images", () => {
    const data = new Uint16Array(32 * 160);
    for (let i = 0; i < data.length; i++) data[i] = (i * 37) % 65536;
    const file = path.join(fs.mkdtempSync(path.join(os.tmpdir(), "fn-pgm-")), "x.pgm");
    writePgm16(file, { width: 160, height: 32, data });
    const back = readPgm16(file);
    expect(back.width).toBe(160);
    expect(back.height).toBe(32);
    expect(Array.from(back.data)).toEqual(Array.from(data));
  });
});

describe("depthToUnit", () => {
  it("maps invalid pixels to the far plane and scales the rest", () => {
    const out = depthToUnit(Uint16Array.from([0, 6000, 12000, 60000]), 12.0);
    expect(out[0]).toBe(1.0);
    expect(out[1]).toBeCloseTo(0.5, 6);
    expect(out[2]).toBeCloseTo(1.0, 6);
    expect(out[3]).toBe(1.0); // clamped beyond max range
  });
});

describe("manifest", () => {
  it("loads the exporter output and verifies hashes", () => {
    const ds = loadManifest(SMALL);
    expect(ds.header.m_theta).toBe(5);
    expect(ds.samples.length).toBe(ds.header.samples);
    const sample = ds.samples[0];
    expect(sample.labels.length).toBe(5);
    expect(sample.labels[0].length).toBe(5);
    expect(sample.state.length).toBe(4);
  });

  it("aborts with the sample id on a corrupt depth file", () => {
    const ds = loadManifest(SMALL, false);
    const tmp = fs.mkdtempSync(path.join(os.tmpdir(), "fn-corrupt-"));
    fs.mkdirSync(path.join(tmp, "depth"), { recursive: true });
    const manifestLines = fs.readFileSync(SMALL, "utf-8").split("\n");
    fs.writeFileSync(path.join(tmp, "manifest.jsonl"),
      manifestLines.slice(0, 2).join("\n") + "\n");
    const depthRel = ds.samples[0].depth;
    const blob = fs.readFileSync(path.join(ds.root, depthRel));
    blob[blob.length - 1] ^= 0xff;
    fs.writeFileSync(path.join(tmp, depthRel), blob);
    expect(() => loadManifest(path.join(tmp, "manifest.jsonl"))).toThrow(
      /corrupt sample w0_v0_s0/
    );
  });
});

describe("splits", () => {
  it("is deterministic and respects the fraction", () => {
    const ds = loadManifest(SMALL, false);
    const a = splitSamples(ds.samples, 0.8, 4);
    const b = splitSamples(ds.samples, 0.8, 4);
    expect(a.train.map((s) => s.id)).toEqual(b.train.map((s) => s.id));
    expect(a.train.length + a.val.length).toBe(ds.samples.length);
    expect(a.train.length).toBe(Math.round(ds.samples.length * 0.8));
    const c = splitSamples(ds.samples, 0.8, 5);
    expect(c.train.map((s) => s.id)).not.toEqual(a.train.map((s) => s.id));
  });

  it("rng shuffle is a permutation", () => {
    const rng = new Rng(9);
    const items = [...Array(50).keys()];
    const shuffled = rng.shuffle(items);
    expect([...shuffled].sort((x, y) => x - y)).toEqual(items);
    expect(shuffled).not.toEqual(items);
  });
});
