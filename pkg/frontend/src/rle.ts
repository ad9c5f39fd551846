import type { RleRow } from './types';

/** Decode run-length encoded label rows into one Int32Array (row-major). */
export function decodeLabels(rows: RleRow[], width: number): Int32Array {
  const out = new Int32Array(rows.length * width);
  for (let r = 0; r < rows.length; r++) {
    let pos = 0;
    for (const [label, count] of rows[r]) {
      out.fill(label, r * width + pos, r * width + pos + count);
      pos += count;
    }
    if (pos !== width) {
      throw new Error(`row ${r}: runs cover ${pos} of ${width} columns`);
    }
  }
  return out;
}

/** Decode the base64-packed uint8 density heat layer. */
export function decodeDensity(b64: string): Uint8Array {
  const binary = atob(b64);
  const out = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) {
    out[i] = binary.charCodeAt(i);
  }
  return out;
}
