#!/usr/bin/env node
/**
 * Command line for the reference stage server.
 *
 *   duplex-stage-server serve --stdio [--roles a,b,c] [--seed N]
 *   duplex-stage-server serve --listen host:port [--roles a,b,c] [--seed N]
 *   duplex-stage-server conformance --command "python3 -m duplexsim serve-mock"
 *   duplex-stage-server conformance --tcp host:port [--json]
 *
 * Exit codes: 0 success / all checks pass, 1 usage error, 2 conformance
 * failure or connection problem.
 */

import { parseArgs } from "node:util";

import { CommandTarget, TcpTarget, formatReport, runConformance } from "./conformance.js";
import { ALL_ROLES, Role, StageResponder, serveStdio, serveTcp } from "./server.js";

function usage(): void {
  process.stderr.write(
    "usage: duplex-stage-server serve [--stdio | --listen host:port] " +
      "[--roles r1,r2] [--seed N]\n" +
      "       duplex-stage-server conformance (--command CMD | --tcp host:port) " +
      "[--deadline-ms N] [--json]\n",
  );
}

function parseRoles(spec: string | undefined): readonly Role[] {
  if (!spec || spec === "all") return ALL_ROLES;
  const roles = spec.split(",").map((r) => r.trim());
  for (const role of roles) {
    if (!(ALL_ROLES as readonly string[]).includes(role)) {
      throw new Error(`unknown role ${JSON.stringify(role)}`);
    }
  }
  return roles as Role[];
}

async function main(): Promise<number> {
  const [, , command, ...rest] = process.argv;

  if (command === "serve") {
    const { values } = parseArgs({
      args: rest,
      options: {
        stdio: { type: "boolean", default: false },
        listen: { type: "string" },
        roles: { type: "string" },
        seed: { type: "string", default: "0" },
      },
    });
    const roles = parseRoles(values.roles);
    const seed = Number(values.seed);
    if (values.listen) {
      const at = values.listen.lastIndexOf(":");
      const host = values.listen.slice(0, at) || "127.0.0.1";
      const port = Number(values.listen.slice(at + 1));
      serveTcp(() => new StageResponder(roles, seed), host, port, (p) =>
        process.stderr.write(`listening on ${host}:${p}\n`),
      );
      return await new Promise<number>(() => {});  // runs until terminated
    }
    serveStdio(new StageResponder(roles, seed));
    return await new Promise<number>(() => {});
  }

  if (command === "conformance") {
    const { values } = parseArgs({
      args: rest,
      options: {
        command: { type: "string" },
        tcp: { type: "string" },
        "deadline-ms": { type: "string", default: "5000" },
        json: { type: "boolean", default: false },
      },
    });
    const deadline = Number(values["deadline-ms"]);
    let target;
    if (values.command) {
      target = new CommandTarget(values.command.split(/\s+/));
    } else if (values.tcp) {
      const at = values.tcp.lastIndexOf(":");
      target = await TcpTarget.connect(values.tcp.slice(0, at), Number(values.tcp.slice(at + 1)));
    } else {
      usage();
      return 1;
    }
    try {
      const report = await runConformance(target, deadline);
      if (values.json) {
        process.stdout.write(JSON.stringify(report, null, 2) + "\n");
      } else {
        process.stdout.write(formatReport(report) + "\n");
      }
      return report.allPass ? 0 : 2;
    } finally {
      target.close();
    }
  }

  usage();
  return 1;
}

main().then(
  (code) => {
    process.exitCode = code;
  },
  (err) => {
    process.stderr.write(`error: ${(err as Error).message}\n`);
    process.exitCode = 2;
  },
);
