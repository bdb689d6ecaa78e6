/**
 * Line-delimited JSON evaluation protocol, one session per process:
 *
 *   -> {"type":"hello","version":1,"n_nodes":K,"n_steps":T}
 *   <- {"type":"hello_ack","version":1}
 *   -> {"type":"eval","id":N,"contacts":[[t,i,j],...]}
 *   <- {"type":"result","id":N,"objective":<float>}
 *   -> {"type":"shutdown"}            (process exits)
 *   <- {"type":"error","message":"..."}  on any malformed or mismatched input
 *
 * Requests are answered in arrival order and every result is tagged with the
 * request id, so pipelined clients can match replies either way. The handler
 * itself is a pure function of (state, line) to keep it testable without
 * spawning a process.
 */

import { createInterface } from "node:readline";

import { makePredictor } from "./model.js";
import type { GraphSequence } from "./model.js";
import { adjacencySequence, checkContacts } from "./graph.js";
import type { ContactTriple } from "./graph.js";
import { featuresFromContacts } from "./data.js";
import type { Checkpoint } from "./checkpoint.js";

export const PROTOCOL_VERSION = 1;

export interface Reaction {
  replies: string[];
  exitCode?: number;
}

export type LineHandler = (line: string) => Reaction;

function errorReply(message: string): Reaction {
  return { replies: [JSON.stringify({ type: "error", message })] };
}

export function createLineHandler(checkpoint: Checkpoint): LineHandler {
  const scenario = checkpoint.scenario;
  const predictor = makePredictor(
    checkpoint.weights,
    checkpoint.config,
    scenario.pairs,
    scenario.nNodes,
    scenario.stepCount,
  );
  let helloSeen = false;

  return (line: string): Reaction => {
    const trimmed = line.trim();
    if (trimmed === "") return { replies: [] };

    let message: unknown;
    try {
      message = JSON.parse(trimmed);
    } catch {
      return errorReply("request is not valid JSON");
    }
    if (typeof message !== "object" || message === null || Array.isArray(message)) {
      return errorReply("request must be a JSON object");
    }
    const msg = message as Record<string, unknown>;

    switch (msg.type) {
      case "hello": {
        if (msg.version !== PROTOCOL_VERSION) {
          return errorReply(`unsupported protocol version ${JSON.stringify(msg.version)}`);
        }
        if (msg.n_nodes !== scenario.nNodes || msg.n_steps !== scenario.stepCount) {
          return errorReply(
            `session shape ${JSON.stringify(msg.n_nodes)} nodes x ` +
              `${JSON.stringify(msg.n_steps)} steps does not match the checkpoint ` +
              `(${scenario.nNodes} nodes x ${scenario.stepCount} steps)`,
          );
        }
        helloSeen = true;
        return { replies: [JSON.stringify({ type: "hello_ack", version: PROTOCOL_VERSION })] };
      }
      case "eval": {
        if (!helloSeen) return errorReply("eval before hello");
        const id = msg.id;
        if (typeof id !== "number" || !Number.isInteger(id)) {
          return errorReply("eval id must be an integer");
        }
        const raw = msg.contacts;
        if (!Array.isArray(raw)) return errorReply("eval contacts must be a list");
        const contacts: ContactTriple[] = [];
        for (const entry of raw) {
          if (!Array.isArray(entry) || entry.length !== 3) {
            return errorReply("contacts entries must be [step, i, j] triples");
          }
          contacts.push([entry[0], entry[1], entry[2]] as ContactTriple);
        }
        let seq: GraphSequence;
        try {
          checkContacts(contacts, scenario.nNodes, scenario.stepCount);
          seq = {
            nNodes: scenario.nNodes,
            nSteps: scenario.stepCount,
            adj: adjacencySequence(contacts, scenario.nNodes, scenario.stepCount),
            features: featuresFromContacts(scenario, contacts),
          };
        } catch (err) {
          return errorReply((err as Error).message);
        }
        const objective = predictor(seq);
        return { replies: [JSON.stringify({ type: "result", id, objective })] };
      }
      case "shutdown":
        return { replies: [], exitCode: 0 };
      default:
        return errorReply(`unknown request type ${JSON.stringify(msg.type)}`);
    }
  };
}

/** Wire a handler to stdio and run until shutdown or end of input. */
export function serveStdio(checkpoint: Checkpoint): void {
  const handler = createLineHandler(checkpoint);
  const rl = createInterface({ input: process.stdin, terminal: false });
  rl.on("line", (line) => {
    const reaction = handler(line);
    for (const reply of reaction.replies) process.stdout.write(reply + "\n");
    if (reaction.exitCode !== undefined) {
      rl.close();
      process.exit(reaction.exitCode);
    }
  });
  rl.on("close", () => {
    process.exit(0);
  });
}
