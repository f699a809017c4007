// Frame payload decoding: base64 single-channel bytes -> RGBA pixels.

export function decodeBase64Gray(b64: string, width: number, height: number): Uint8Array {
  const bin = typeof atob === "function" ? atob(b64) : bufferDecode(b64);
  if (bin.length !== width * height) {
    throw new Error(`frame payload is ${bin.length} bytes, expected ${width * height}`);
  }
  const out = new Uint8Array(width * height);
  for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
  return out;
}

function bufferDecode(b64: string): string {
  // node path (tests); browsers take the atob branch
  return Buffer.from(b64, "base64").toString("binary");
}

export function grayToRgba(gray: Uint8Array): Uint8ClampedArray<ArrayBuffer> {
  const rgba = new Uint8ClampedArray(new ArrayBuffer(gray.length * 4));
  for (let i = 0; i < gray.length; i++) {
    rgba[i * 4] = gray[i];
    rgba[i * 4 + 1] = gray[i];
    rgba[i * 4 + 2] = gray[i];
    rgba[i * 4 + 3] = 255;
  }
  return rgba;
}

export function brightestPixel(gray: Uint8Array, width: number): { row: number; col: number } {
  let best = 0;
  let at = 0;
  for (let i = 0; i < gray.length; i++) {
    if (gray[i] > best) {
      best = gray[i];
      at = i;
    }
  }
  return { row: Math.floor(at / width), col: at % width };
}
