/**
 * Filesystem IO handlers for TensorFlow.js LayersModel checkpoints.
 *
 * The pure-JS tfjs build has no `file://` scheme handler (that lives in
 * tfjs-node), so saving/loading a checkpoint directory goes through these:
 * a checkpoint is `model.json` (topology + weights manifest) plus one
 * `weights.bin` alongside it.
 */

import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { dirname, join } from "node:path";
import * as tf from "@tensorflow/tfjs";

export function fileSaveHandler(modelJsonPath: string): tf.io.IOHandler {
  return {
    save: async (artifacts: tf.io.ModelArtifacts) => {
      mkdirSync(dirname(modelJsonPath), { recursive: true });
      const weightsName = "weights.bin";
      const manifest = [
        {
          paths: [weightsName],
          weights: artifacts.weightSpecs ?? [],
        },
      ];
      const modelJson = {
        modelTopology: artifacts.modelTopology,
        format: "layers-model",
        generatedBy: "patchfield-exporter",
        convertedBy: null,
        weightsManifest: manifest,
      };
      writeFileSync(modelJsonPath, JSON.stringify(modelJson));
      const weightData = artifacts.weightData as ArrayBuffer;
      writeFileSync(join(dirname(modelJsonPath), weightsName), Buffer.from(weightData));
      return {
        modelArtifactsInfo: {
          dateSaved: new Date(),
          modelTopologyType: "JSON",
        },
      };
    },
  };
}

export function fileLoadHandler(modelJsonPath: string): tf.io.IOHandler {
  return {
    load: async (): Promise<tf.io.ModelArtifacts> => {
      const modelJson = JSON.parse(readFileSync(modelJsonPath, "utf8"));
      const weightSpecs: tf.io.WeightsManifestEntry[] = [];
      const chunks: Buffer[] = [];
      for (const group of modelJson.weightsManifest ?? []) {
        weightSpecs.push(...group.weights);
        for (const rel of group.paths) {
          chunks.push(readFileSync(join(dirname(modelJsonPath), rel)));
        }
      }
      const weights = Buffer.concat(chunks);
      const weightData = weights.buffer.slice(
        weights.byteOffset,
        weights.byteOffset + weights.byteLength,
      );
      return {
        modelTopology: modelJson.modelTopology,
        weightSpecs,
        weightData,
      };
    },
  };
}

export async function loadCheckpoint(modelJsonPath: string): Promise<tf.LayersModel> {
  return tf.loadLayersModel(fileLoadHandler(modelJsonPath));
}
