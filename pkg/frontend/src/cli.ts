// Foreign-function boundary: one request per invocation over stdin/stdout,
// flat integer buffers, all integers big-endian.
//
// Request:
//   u8  op            1 = encode, 2 = decode
//   u32 T             number of tables
//   u32 A             alphabet size
//   T*A u32           frequencies (each table sums to 2^16)
//   u32 N             symbol count
//   N  u32            table ids
//   encode only: N u16 symbols
//   decode only: u32 L, L bytes coded buffer (wire format)
//
// Response:
//   encode: u32 L, L bytes coded buffer (wire format)
//   decode: N u16 symbols

import { Decoder, buildTables, bufferFromBytes, bufferToBytes, encode } from "./rans";

function readAll(stream: NodeJS.ReadStream): Promise<Buffer> {
  return new Promise((resolve, reject) => {
    const chunks: Buffer[] = [];
    stream.on("data", (c) => chunks.push(Buffer.from(c)));
    stream.on("end", () => resolve(Buffer.concat(chunks)));
    stream.on("error", reject);
  });
}

async function run(): Promise<void> {
  const input = await readAll(process.stdin);
  const view = new DataView(input.buffer, input.byteOffset, input.byteLength);
  let pos = 0;
  const op = view.getUint8(pos); pos += 1;
  const numTables = view.getUint32(pos); pos += 4;
  const alphabet = view.getUint32(pos); pos += 4;
  const freqs: Uint32Array[] = [];
  for (let t = 0; t < numTables; t++) {
    const row = new Uint32Array(alphabet);
    for (let s = 0; s < alphabet; s++) {
      row[s] = view.getUint32(pos); pos += 4;
    }
    freqs.push(row);
  }
  const tables = buildTables(freqs);
  const n = view.getUint32(pos); pos += 4;
  const ids = new Uint32Array(n);
  for (let i = 0; i < n; i++) {
    ids[i] = view.getUint32(pos); pos += 4;
  }

  if (op === 1) {
    const symbols = new Uint16Array(n);
    for (let i = 0; i < n; i++) {
      symbols[i] = view.getUint16(pos); pos += 2;
    }
    const wire = bufferToBytes(encode(symbols, tables, ids));
    const out = Buffer.alloc(4 + wire.length);
    out.writeUInt32BE(wire.length, 0);
    out.set(wire, 4);
    process.stdout.write(out);
  } else if (op === 2) {
    const wireLen = view.getUint32(pos); pos += 4;
    const wire = input.subarray(pos, pos + wireLen);
    const symbols = new Decoder(bufferFromBytes(wire)).decode(tables, ids);
    const out = Buffer.alloc(2 * n);
    for (let i = 0; i < n; i++) {
      out.writeUInt16BE(symbols[i], 2 * i);
    }
    process.stdout.write(out);
  } else {
    throw new Error(`unknown op ${op}`);
  }
}

run().catch((err) => {
  process.stderr.write(String(err) + "\n");
  process.exit(1);
});
