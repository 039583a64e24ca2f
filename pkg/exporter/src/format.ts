/**
 * Writer and reader for the SFW1 binary weight format.
 *
 * Layout (all integers little-endian):
 *
 *   bytes 0..3   magic "SFW1"
 *   u32          format version (currently 1)
 *   3 x f32      per-channel means, in the declared channel order
 *   u8           channel-order flag: 0 = RGB, 1 = BGR
 *   u32          entry count
 *   per entry:   u16 name length, UTF-8 name,
 *                u8 rank, rank x u32 dimensions,
 *                prod(dims) x f32 payload
 *   u32          CRC-32 of all payload bytes in file order
 *
 * Entries are written in a canonical order (each conv layer's weight
 * then bias, layers in network order) so that export -> load ->
 * re-serialise round trips are byte-identical.
 */

export const MAGIC = 'SFW1';
export const VERSION = 1;

export type ChannelOrder = 'rgb' | 'bgr';

export interface WeightEntry {
  name: string;
  shape: number[];
  data: Float32Array;
}

export interface WeightFile {
  channelMeans: [number, number, number];
  channelOrder: ChannelOrder;
  entries: WeightEntry[];
}

const CRC_TABLE = buildCrcTable();

function buildCrcTable(): Uint32Array {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c;
  }
  return table;
}

/** IEEE CRC-32 (the zlib polynomial), updatable across chunks. */
export function crc32(data: Uint8Array, seed = 0): number {
  let c = ~seed >>> 0;
  for (let i = 0; i < data.length; i++) {
    c = CRC_TABLE[(c ^ data[i]) & 0xff] ^ (c >>> 8);
  }
  return ~c >>> 0;
}

function product(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function serialiseWeightFile(file: WeightFile): Uint8Array {
  const encoder = new TextEncoder();
  const chunks: Uint8Array[] = [];
  let crc = 0;

  const head = new DataView(new ArrayBuffer(4 + 4 + 12 + 1 + 4));
  let pos = 0;
  for (const ch of MAGIC) {
    head.setUint8(pos++, ch.charCodeAt(0));
  }
  head.setUint32(pos, VERSION, true);
  pos += 4;
  for (const mean of file.channelMeans) {
    head.setFloat32(pos, mean, true);
    pos += 4;
  }
  head.setUint8(pos++, file.channelOrder === 'bgr' ? 1 : 0);
  head.setUint32(pos, file.entries.length, true);
  chunks.push(new Uint8Array(head.buffer));

  for (const entry of file.entries) {
    const name = encoder.encode(entry.name);
    if (entry.data.length !== product(entry.shape)) {
      throw new Error(
        `entry ${entry.name} has ${entry.data.length} values, shape says ${product(entry.shape)}`
      );
    }
    const desc = new DataView(new ArrayBuffer(2 + name.length + 1 + 4 * entry.shape.length));
    desc.setUint16(0, name.length, true);
    new Uint8Array(desc.buffer).set(name, 2);
    desc.setUint8(2 + name.length, entry.shape.length);
    entry.shape.forEach((dim, i) => desc.setUint32(2 + name.length + 1 + 4 * i, dim, true));
    chunks.push(new Uint8Array(desc.buffer));

    const payload = littleEndianBytes(entry.data);
    crc = crc32(payload, crc);
    chunks.push(payload);
  }

  const tail = new DataView(new ArrayBuffer(4));
  tail.setUint32(0, crc, true);
  chunks.push(new Uint8Array(tail.buffer));

  const total = chunks.reduce((n, c) => n + c.length, 0);
  const out = new Uint8Array(total);
  let offset = 0;
  for (const chunk of chunks) {
    out.set(chunk, offset);
    offset += chunk.length;
  }
  return out;
}

function littleEndianBytes(values: Float32Array): Uint8Array {
  const view = new DataView(new ArrayBuffer(4 * values.length));
  for (let i = 0; i < values.length; i++) {
    view.setFloat32(4 * i, values[i], true);
  }
  return new Uint8Array(view.buffer);
}

/** Parse an SFW1 buffer, verifying structure and the payload checksum. */
export function parseWeightFile(data: Uint8Array): WeightFile {
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  let pos = 0;
  const need = (n: number, what: string) => {
    if (pos + n > data.length) {
      throw new Error(`file ends inside ${what} at offset ${pos}`);
    }
  };

  need(4, 'magic');
  const magic = String.fromCharCode(data[0], data[1], data[2], data[3]);
  pos = 4;
  if (magic !== MAGIC) {
    throw new Error(`bad magic ${JSON.stringify(magic)}, expected ${MAGIC}`);
  }
  need(4, 'version');
  const version = view.getUint32(pos, true);
  pos += 4;
  if (version !== VERSION) {
    throw new Error(`unsupported format version ${version}`);
  }
  need(13, 'preprocessing block');
  const means: [number, number, number] = [
    view.getFloat32(pos, true),
    view.getFloat32(pos + 4, true),
    view.getFloat32(pos + 8, true),
  ];
  pos += 12;
  const orderFlag = data[pos++];
  if (orderFlag !== 0 && orderFlag !== 1) {
    throw new Error(`unknown channel-order flag ${orderFlag}`);
  }
  need(4, 'entry count');
  const count = view.getUint32(pos, true);
  pos += 4;

  const decoder = new TextDecoder();
  const entries: WeightEntry[] = [];
  let crc = 0;
  for (let i = 0; i < count; i++) {
    need(2, `entry ${i} name length`);
    const nameLen = view.getUint16(pos, true);
    pos += 2;
    need(nameLen, `entry ${i} name`);
    const name = decoder.decode(data.subarray(pos, pos + nameLen));
    pos += nameLen;
    need(1, `${name} rank`);
    const rank = data[pos++];
    const shape: number[] = [];
    for (let d = 0; d < rank; d++) {
      need(4, `${name} dimension`);
      shape.push(view.getUint32(pos, true));
      pos += 4;
    }
    const nBytes = 4 * product(shape);
    need(nBytes, `${name} payload`);
    const payload = data.subarray(pos, pos + nBytes);
    crc = crc32(payload, crc);
    const values = new Float32Array(product(shape));
    for (let v = 0; v < values.length; v++) {
      values[v] = view.getFloat32(pos + 4 * v, true);
    }
    pos += nBytes;
    entries.push({ name, shape, data: values });
  }

  need(4, 'checksum');
  const stored = view.getUint32(pos, true);
  pos += 4;
  if (pos !== data.length) {
    throw new Error(`${data.length - pos} unexpected trailing bytes after checksum`);
  }
  if (stored !== crc) {
    throw new Error(
      `payload checksum mismatch: stored 0x${stored.toString(16)}, computed 0x${crc.toString(16)}`
    );
  }
  return {
    channelMeans: means,
    channelOrder: orderFlag === 1 ? 'bgr' : 'rgb',
    entries,
  };
}
