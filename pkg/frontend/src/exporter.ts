/**
 * Dump per-layer activations from a TensorFlow.js encoder-decoder checkpoint
 * into tensor files plus a dataset manifest the Python toolchain ingests
 * unchanged. The boundary is the file format: no searching, no composition.
 *
 * Hook points are tfjs layer names declared in the plan; the checkpoint's
 * emitted channel depth must match the declared hyperpatch depth or the
 * export aborts naming the offending layer.
 */

import { copyFileSync, existsSync, mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { dirname, isAbsolute, join, resolve } from "node:path";
import * as tf from "@tensorflow/tfjs";
import { z } from "zod";

import { loadCheckpoint } from "./modelio.js";
import { readPng } from "./png.js";
import { Tensor3, writeTensorFile } from "./tensorfile.js";

const layerSchema = z.object({
  name: z.string().min(1),
  hook: z.string().min(1),
  hyperpatch: z.tuple([z.number().int().min(1), z.number().int().min(1), z.number().int().min(1)]),
  patch_size: z.number().int().min(1),
  scale: z.number().int().min(1),
  role: z.enum(["encoder", "decoder", "descriptor"]),
});

export const planSchema = z.object({
  checkpoint: z.string().min(1),
  image_size: z.object({ w: z.number().int().min(1), h: z.number().int().min(1) }),
  preprocess: z.enum(["unit", "center"]).default("unit"),
  layers: z.array(layerSchema).min(1),
  images: z
    .array(
      z.object({
        id: z.number().int().min(0),
        input_png: z.string().min(1),
        output_png: z.string().min(1),
        tags: z.array(z.string()).optional(),
      }),
    )
    .min(1),
  out_dir: z.string().min(1),
});

export type ExportPlan = z.infer<typeof planSchema>;

export interface ExportSummary {
  manifest: string;
  pairs: number;
  layers: string[];
  tensor_files: number;
}

export function parsePlan(doc: unknown, planDir: string): ExportPlan {
  const plan = planSchema.parse(doc);
  const ids = [...plan.images].map((i) => i.id).sort((a, b) => a - b);
  ids.forEach((id, index) => {
    if (id !== index) {
      throw new Error(`image ids must be dense 0..${plan.images.length - 1}, got ${ids}`);
    }
  });
  const descriptors = plan.layers.filter((l) => l.role === "descriptor");
  if (descriptors.length !== 1) {
    throw new Error(`exactly one layer must have role "descriptor", found ${descriptors.length}`);
  }
  const rebase = (p: string) => (isAbsolute(p) ? p : resolve(planDir, p));
  return {
    ...plan,
    checkpoint: rebase(plan.checkpoint),
    out_dir: rebase(plan.out_dir),
    images: plan.images.map((img) => ({
      ...img,
      input_png: rebase(img.input_png),
      output_png: rebase(img.output_png),
    })),
  };
}

function toInputTensor(
  path: string,
  size: { w: number; h: number },
  preprocess: "unit" | "center",
): tf.Tensor4D {
  const image = readPng(path);
  if (image.width !== size.w || image.height !== size.h) {
    throw new Error(
      `${path}: image is ${image.width}x${image.height}, plan declares ${size.w}x${size.h}`,
    );
  }
  const floats = new Float32Array(image.data.length);
  for (let i = 0; i < image.data.length; i++) {
    floats[i] = preprocess === "unit" ? image.data[i] / 255 : image.data[i] / 127.5 - 1;
  }
  return tf.tensor4d(floats, [1, size.h, size.w, 3]);
}

function activationToTensor3(activation: tf.Tensor, layerName: string): Tensor3 {
  const shape = activation.shape;
  if (shape.length !== 4 || shape[0] !== 1) {
    throw new Error(
      `layer ${layerName}: expected a [1, H, W, C] activation, got [${shape.join(", ")}]`,
    );
  }
  const [, h, w, d] = shape as [number, number, number, number];
  return { h, w, d, values: activation.dataSync() as Float32Array };
}

export async function runExport(plan: ExportPlan): Promise<ExportSummary> {
  if (!existsSync(plan.checkpoint)) {
    throw new Error(`checkpoint not found: ${plan.checkpoint}`);
  }
  const model = await loadCheckpoint(plan.checkpoint);
  const probes = plan.layers.map((layer) => {
    try {
      return model.getLayer(layer.hook).output as tf.SymbolicTensor;
    } catch {
      throw new Error(`layer ${layer.name}: checkpoint has no layer named "${layer.hook}"`);
    }
  });
  const probe = tf.model({ inputs: model.inputs, outputs: probes });

  mkdirSync(join(plan.out_dir, "tensors"), { recursive: true });
  mkdirSync(join(plan.out_dir, "images"), { recursive: true });

  const pairs = [];
  let tensorFiles = 0;
  for (const image of [...plan.images].sort((a, b) => a.id - b.id)) {
    const input = toInputTensor(image.input_png, plan.image_size, plan.preprocess);
    const outputs = probe.predict(input) as tf.Tensor | tf.Tensor[];
    const activations = Array.isArray(outputs) ? outputs : [outputs];

    const tensors: Record<string, string> = {};
    plan.layers.forEach((layer, index) => {
      const tensor = activationToTensor3(activations[index], layer.name);
      if (tensor.d !== layer.hyperpatch[2]) {
        throw new Error(
          `layer ${layer.name}: checkpoint emits depth ${tensor.d}, ` +
            `plan declares ${layer.hyperpatch[2]}`,
        );
      }
      if (tensor.h < layer.hyperpatch[0] || tensor.w < layer.hyperpatch[1]) {
        throw new Error(
          `layer ${layer.name}: activation ${tensor.h}x${tensor.w} cannot host a ` +
            `${layer.hyperpatch[0]}x${layer.hyperpatch[1]} hyperpatch`,
        );
      }
      const rel = join("tensors", `${String(image.id).padStart(3, "0")}_${layer.name}.chpt`);
      writeTensorFile(tensor, join(plan.out_dir, rel));
      tensors[layer.name] = rel;
      tensorFiles += 1;
    });
    activations.forEach((t) => t.dispose());
    input.dispose();

    const inputRel = join("images", `${String(image.id).padStart(3, "0")}_input.png`);
    const outputRel = join("images", `${String(image.id).padStart(3, "0")}_output.png`);
    copyFileSync(image.input_png, join(plan.out_dir, inputRel));
    copyFileSync(image.output_png, join(plan.out_dir, outputRel));
    pairs.push({
      id: image.id,
      input_png: inputRel,
      output_png: outputRel,
      tensors,
      ...(image.tags ? { tags: image.tags } : {}),
    });
  }

  const manifest = {
    image_size: plan.image_size,
    layers: plan.layers.map(({ hook: _hook, ...rest }) => rest),
    pairs,
  };
  const manifestPath = join(plan.out_dir, "manifest.json");
  writeFileSync(manifestPath, JSON.stringify(manifest, null, 2) + "\n");
  return {
    manifest: manifestPath,
    pairs: pairs.length,
    layers: plan.layers.map((l) => l.name),
    tensor_files: tensorFiles,
  };
}

export function planFromFile(planPath: string): ExportPlan {
  const raw = JSON.parse(readFileSync(planPath, "utf8"));
  return parsePlan(raw, dirname(resolve(planPath)));
}
