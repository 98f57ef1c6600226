/**
 * View model for the connectivity panel.
 *
 * The panel turns a connectivity report from the server into rows the UI can
 * render directly: one row per scene pair, with non-rigid pairs highlighted,
 * plus a single readiness verdict. Malformed reports become an error state
 * rather than a crash, and fetch failures become an offline banner.
 */

import { ZodError } from "zod";

import { ApiClient, ConnectivityReport, ConnectivityReportSchema } from "./api.js";

export interface PairRow {
  label: string;
  sharedKeypoints: number;
  rigid: boolean;
  /** True for pairs the UI should flag (shared clicks exist but the pair
   * cannot constrain a rigid transform). */
  highlight: boolean;
}

export type PanelModel =
  | {
      kind: "report";
      rows: PairRow[];
      components: string[][];
      liftFailures: number;
      readyToSolve: boolean;
      summary: string;
    }
  | { kind: "error"; message: string }
  | { kind: "offline"; message: string };

export function panelFromReport(raw: unknown): PanelModel {
  const parsed = ConnectivityReportSchema.safeParse(raw);
  if (!parsed.success) {
    return {
      kind: "error",
      message: "connectivity report malformed; check the annotation server",
    };
  }
  const report: ConnectivityReport = parsed.data;
  const rows: PairRow[] = report.pairs.map((pair) => ({
    label: `${pair.scenes[0]} ↔ ${pair.scenes[1]}`,
    sharedKeypoints: pair.shared_keypoints,
    rigid: pair.rigid,
    highlight: !pair.rigid,
  }));
  const readyToSolve = report.solvable && rows.every((row) => row.rigid);
  let summary: string;
  if (readyToSolve) {
    summary = "all scenes rigidly connected; ready to solve";
  } else if (!report.solvable) {
    summary = `scenes split into ${report.components.length} groups; add shared keypoints`;
  } else {
    summary = "some scene pairs lack 3 non-collinear shared keypoints";
  }
  return {
    kind: "report",
    rows,
    components: report.components,
    liftFailures: report.lift_failures,
    readyToSolve,
    summary,
  };
}

export async function fetchPanel(api: ApiClient): Promise<PanelModel> {
  let report: ConnectivityReport;
  try {
    report = await api.getConnectivity();
  } catch (err) {
    if (err instanceof ZodError) {
      return {
        kind: "error",
        message: "connectivity report malformed; check the annotation server",
      };
    }
    return { kind: "offline", message: "annotation server unreachable" };
  }
  return panelFromReport(report);
}
