import * as fs from "fs";

export interface Pgm16 {
  width: number;
  height: number;
  /** Row-major 16-bit samples; 0 marks an invalid pixel. */
  data: Uint16Array;
}

/** Decode a binary 16-bit PGM (P5, maxval 65535, big-endian samples). */
export function readPgm16(file: string): Pgm16 {
  const raw = fs.readFileSync(file);
  const header = raw.subarray(0, 64).toString("latin1");
  const m = header.match(/^P5\s+(\d+)\s+(\d+)\s+(\d+)\s/);
  if (!m) throw new Error(`${file}: not a binary PGM`);
  const width = parseInt(m[1], 10);
  const height = parseInt(m[2], 10);
  const maxval = parseInt(m[3], 10);
  if (maxval !== 65535) throw new Error(`${file}: expected 16-bit PGM`);
  const offset = m[0].length;
  const expected = width * height * 2;
  if (raw.length - offset < expected) {
    throw new Error(`${file}: truncated pixel data`);
  }
  const data = new Uint16Array(width * height);
  for (let i = 0; i < data.length; i++) {
    data[i] = raw.readUInt16BE(offset + 2 * i);
  }
  return { width, height, data };
}

export function writePgm16(file: string, img: Pgm16): void {
  const header = Buffer.from(`P5\n${img.width} ${img.height}\n65535\n`, "latin1");
  const body = Buffer.alloc(img.data.length * 2);
  for (let i = 0; i < img.data.length; i++) {
    body.writeUInt16BE(img.data[i], 2 * i);
  }
  fs.writeFileSync(file, Buffer.concat([header, body]));
}
