/**
 * Bridge entry point.
 *
 * Usage:
 *   node dist/main.js --stub --seed 7                 # stdio transport
 *   node dist/main.js --stub --seed 7 --transport tcp:9830
 *   node dist/main.js --model stub-biased:7
 *
 * Only the deterministic stub scorer ships in this build; pointing
 * --model at anything else fails fast with an explanation. The stub
 * reproduces the engine's in-process scorer bit-for-bit for matched
 * seeds, which is what the protocol conformance suite exercises.
 */

import { createInterface } from "node:readline";
import { createServer } from "node:net";
import process from "node:process";

import { seededParams } from "./stubModel.js";
import { handleLine, ServerOptions } from "./server.js";

interface CliConfig {
  model: string;
  transport: string;
}

function parseArgs(argv: string[]): CliConfig {
  const cfg: CliConfig = { model: "", transport: "stdio" };
  let seed = "0";
  let stub = false;
  let biased = false;
  for (let i = 0; i < argv.length; i++) {
    switch (argv[i]) {
      case "--stub":
        stub = true;
        break;
      case "--biased":
        biased = true;
        break;
      case "--seed":
        seed = argv[++i];
        break;
      case "--model":
        cfg.model = argv[++i];
        break;
      case "--transport":
        cfg.transport = argv[++i];
        break;
      default:
        throw new Error(`unknown argument ${argv[i]}`);
    }
  }
  if (stub && !cfg.model) {
    cfg.model = `${biased ? "stub-biased" : "stub"}:${seed}`;
  }
  if (!cfg.model) {
    throw new Error("no model given; use --stub [--seed N] or --model stub:<seed>");
  }
  return cfg;
}

function buildOptions(model: string): ServerOptions {
  const [kind, seedText] = model.split(":");
  if (kind !== "stub" && kind !== "stub-biased") {
    throw new Error(
      `unsupported model ${model}; this build ships only the deterministic ` +
        "stub scorer (stub:<seed> | stub-biased:<seed>)",
    );
  }
  const seed = BigInt(seedText ?? "0");
  return { params: seededParams(seed, kind === "stub-biased") };
}

function serveStdio(opts: ServerOptions): void {
  const rl = createInterface({ input: process.stdin });
  rl.on("line", (line) => {
    const reply = handleLine(line, opts);
    if (reply !== null) process.stdout.write(reply + "\n");
  });
}

function serveTcp(opts: ServerOptions, port: number): void {
  const server = createServer((socket) => {
    const rl = createInterface({ input: socket });
    rl.on("line", (line) => {
      const reply = handleLine(line, opts);
      if (reply !== null) socket.write(reply + "\n");
    });
    socket.on("error", () => socket.destroy());
  });
  server.listen(port, () => {
    process.stderr.write(`bridge listening on tcp:${port}\n`);
  });
}

function main(): void {
  const cfg = parseArgs(process.argv.slice(2));
  const opts = buildOptions(cfg.model);
  if (cfg.transport === "stdio") {
    serveStdio(opts);
  } else if (cfg.transport.startsWith("tcp:")) {
    serveTcp(opts, Number(cfg.transport.slice(4)));
  } else {
    throw new Error(`unknown transport ${cfg.transport}`);
  }
}

main();
