/**
 * Declarative source-to-target renaming. Rules are ordered; the first match
 * wins. A rule is either an exact name or a pattern with one `*` wildcard,
 * whose captured text substitutes into a `*` in the target.
 */

import { readFileSync } from 'node:fs';

export interface NameRule {
  from: string;
  to: string;
}

export interface NameMap {
  rules: NameRule[];
  strict: boolean;
}

export class NameMapError extends Error {}

export function loadNameMap(path: string): NameMap {
  let doc: unknown;
  try {
    doc = JSON.parse(readFileSync(path, 'utf-8'));
  } catch (e) {
    throw new NameMapError(`${path}: invalid JSON: ${e}`);
  }
  const obj = doc as { rules?: unknown; strict?: unknown };
  if (!obj || !Array.isArray(obj.rules)) {
    throw new NameMapError(`${path}: name map needs a "rules" array`);
  }
  const rules: NameRule[] = [];
  for (const [i, raw] of obj.rules.entries()) {
    const rule = raw as { from?: unknown; to?: unknown };
    if (typeof rule.from !== 'string' || typeof rule.to !== 'string') {
      throw new NameMapError(`${path}: rule ${i} needs string "from" and "to"`);
    }
    if ((rule.from.match(/\*/g) ?? []).length > 1 || (rule.to.match(/\*/g) ?? []).length > 1) {
      throw new NameMapError(`${path}: rule ${i} may use at most one "*" on each side`);
    }
    if (rule.to.includes('*') && !rule.from.includes('*')) {
      throw new NameMapError(`${path}: rule ${i} substitutes "*" without capturing one`);
    }
    rules.push({ from: rule.from, to: rule.to });
  }
  const strict = obj.strict === undefined ? true : Boolean(obj.strict);
  return { rules, strict };
}

function matchRule(rule: NameRule, name: string): string | null {
  const star = rule.from.indexOf('*');
  if (star < 0) {
    return name === rule.from ? rule.to : null;
  }
  const prefix = rule.from.slice(0, star);
  const suffix = rule.from.slice(star + 1);
  if (!name.startsWith(prefix) || !name.endsWith(suffix)) return null;
  if (name.length < prefix.length + suffix.length) return null;
  const captured = name.slice(prefix.length, name.length - suffix.length);
  return rule.to.replace('*', captured);
}

export interface Mapping {
  source: string;
  target: string;
}

/** Apply the map to every source name; returns mappings plus skipped names. */
export function applyNameMap(
  map: NameMap,
  sourceNames: string[],
): { mappings: Mapping[]; skipped: string[] } {
  const mappings: Mapping[] = [];
  const skipped: string[] = [];
  const targets = new Map<string, string>();
  for (const name of sourceNames) {
    let target: string | null = null;
    for (const rule of map.rules) {
      target = matchRule(rule, name);
      if (target !== null) break;
    }
    if (target === null) {
      if (map.strict) {
        throw new NameMapError(`unmapped tensor ${name} (strict mode)`);
      }
      skipped.push(name);
      continue;
    }
    const prior = targets.get(target);
    if (prior !== undefined) {
      throw new NameMapError(
        `target name ${target} produced by both ${prior} and ${name}`,
      );
    }
    targets.set(target, name);
    mappings.push({ source: name, target });
  }
  return { mappings, skipped };
}
