/** Independent decoder for outbound controller samples (test oracle side). */

export interface DecodedSample {
  seq: number;
  tClientNs: bigint;
  delta: { x: number; y: number; z: number };
  quat: { w: number; x: number; y: number; z: number };
  clutch: boolean;
}

export function decodePhoneSampleForTest(buf: Buffer): DecodedSample {
  if (buf.length !== 69) throw new Error(`expected 69 bytes, got ${buf.length}`);
  return {
    seq: buf.readUInt32LE(0),
    tClientNs: buf.readBigUInt64LE(4),
    delta: {
      x: buf.readDoubleLE(12),
      y: buf.readDoubleLE(20),
      z: buf.readDoubleLE(28),
    },
    quat: {
      w: buf.readDoubleLE(36),
      x: buf.readDoubleLE(44),
      y: buf.readDoubleLE(52),
      z: buf.readDoubleLE(60),
    },
    clutch: buf.readUInt8(68) === 1,
  };
}
