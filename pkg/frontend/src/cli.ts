/** CLI: `node dist/cli.js <plan.json>` runs an export and prints a summary. */

import { planFromFile, runExport } from "./exporter.js";

async function main(): Promise<number> {
  const [planPath] = process.argv.slice(2);
  if (!planPath) {
    console.error("usage: cli.js <plan.json>");
    return 2;
  }
  try {
    const plan = planFromFile(planPath);
    const summary = await runExport(plan);
    console.log(JSON.stringify(summary, null, 2));
    return 0;
  } catch (err) {
    console.error(`export aborted: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

main().then((code) => {
  process.exitCode = code;
});
