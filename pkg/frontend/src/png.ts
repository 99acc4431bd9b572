/** Minimal PNG helpers on top of pngjs: RGB in, RGB out. */

import { readFileSync, writeFileSync } from "node:fs";
import { PNG } from "pngjs";

export interface RgbImage {
  width: number;
  height: number;
  /** row-major RGB triples, length = width * height * 3 */
  data: Uint8Array;
}

export function readPng(path: string): RgbImage {
  const png = PNG.sync.read(readFileSync(path));
  const data = new Uint8Array(png.width * png.height * 3);
  for (let i = 0, j = 0; i < png.data.length; i += 4, j += 3) {
    data[j] = png.data[i];
    data[j + 1] = png.data[i + 1];
    data[j + 2] = png.data[i + 2];
  }
  return { width: png.width, height: png.height, data };
}

export function writePng(image: RgbImage, path: string): void {
  const png = new PNG({ width: image.width, height: image.height });
  for (let i = 0, j = 0; j < image.data.length; i += 4, j += 3) {
    png.data[i] = image.data[j];
    png.data[i + 1] = image.data[j + 1];
    png.data[i + 2] = image.data[j + 2];
    png.data[i + 3] = 255;
  }
  writeFileSync(path, PNG.sync.write(png));
}
