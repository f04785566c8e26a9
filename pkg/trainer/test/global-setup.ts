import { execFileSync } from "child_process";
import * as fs from "fs";
import * as path from "path";

const ROOT = path.resolve(__dirname, "..");
const FIXTURES = path.join(ROOT, ".fixtures");
const PYTHON = process.env.FORESTNAV_PYTHON ?? "python3";

function generate(name: string, config: string, args: string[]): void {
  const manifest = path.join(FIXTURES, name, "manifest.jsonl");
  if (fs.existsSync(manifest)) return;
  console.log(`[fixtures] generating ${name} via the forestnav CLI...`);
  execFileSync(
    PYTHON,
    ["-m", "forestnav.cli", "--config", config, ...args],
    { stdio: "inherit", timeout: 1_800_000 }
  );
}

/** Build the expert datasets through the exporter CLI when missing. */
export default function setup(): void {
  fs.mkdirSync(FIXTURES, { recursive: true });
  generate("ds-small", path.join(ROOT, "test", "config-small.json"), [
    "--seed", "11", "dataset",
    "--out", path.join(FIXTURES, "ds-small"),
    "--worlds", "1", "--viewpoints", "7", "--states", "8",
  ]);
  generate("ds-big", path.join(ROOT, "test", "config-big.json"), [
    "--seed", "21", "dataset",
    "--out", path.join(FIXTURES, "ds-big"),
    "--worlds", "2", "--viewpoints", "125", "--states", "8",
  ]);
}
