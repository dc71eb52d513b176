/** Parse the gateway's rendered agent tree.
 *
 * The wire format is one agent per line, two spaces of indent per level:
 *
 *   [SUP] Supervisor
 *     [WRK] Coder
 *
 * Indentation IS the level; the parser refuses anything that would make the
 * two disagree (odd indent, level jumps, children before a root).
 */

export type AgentTag = "SUP" | "TSUP" | "WRK";

export interface HierarchyNode {
  name: string;
  tag: AgentTag;
  level: number;
  parent: string | null;
}

const LINE = /^( *)\[(SUP|TSUP|WRK)\] (.+)$/;

export function parseHierarchy(text: string): HierarchyNode[] {
  const nodes: HierarchyNode[] = [];
  const lastAtLevel: string[] = [];
  for (const [index, raw] of text.split("\n").entries()) {
    const line = raw.trimEnd();
    if (!line) continue;
    const match = LINE.exec(line);
    if (!match) throw new Error(`line ${index + 1}: not an agent line: ${line}`);
    const indent = match[1].length;
    if (indent % 2 !== 0) throw new Error(`line ${index + 1}: odd indent ${indent}`);
    const level = indent / 2;
    if (level > lastAtLevel.length) {
      throw new Error(`line ${index + 1}: level ${level} without a parent chain`);
    }
    const node: HierarchyNode = {
      name: match[3],
      tag: match[2] as AgentTag,
      level,
      parent: level === 0 ? null : lastAtLevel[level - 1],
    };
    nodes.push(node);
    lastAtLevel.length = level;
    lastAtLevel.push(node.name);
  }
  return nodes;
}

export function nodeByName(
  nodes: HierarchyNode[],
  name: string,
): HierarchyNode | undefined {
  return nodes.find((node) => node.name === name);
}
