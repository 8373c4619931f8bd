/**
 * Browser console for multi-turn interactive editing.
 *
 * Flow: upload image -> session; type an instruction -> plan preview
 * (edit type, object, mask overlay, caption); repaint the mask, edit the
 * caption, tune preservation scale / blur; run the round; walk the
 * history strip and promote any prior result for branch-free re-editing.
 * Every pixel shown is fetched from the service's /artifacts endpoint.
 */

import { EditingService, ServiceError } from "./api";
import { MaskBuffer } from "./maskBuffer";
import { bytesToBase64, encodeGrayPng } from "./pngCodec";
import { WorkspaceStore, captionOverride, latestResultRef } from "./state";

const params = new URLSearchParams(location.search);
const service = new EditingService(
  params.get("service") ?? "http://127.0.0.1:8000");
const store = new WorkspaceStore();

let mask: MaskBuffer | null = null;
let imageBitmap: ImageBitmap | null = null;

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el as T;
};

const fileInput = $<HTMLInputElement>("file");
const instructionInput = $<HTMLInputElement>("instruction");
const planButton = $<HTMLButtonElement>("plan");
const runButton = $<HTMLButtonElement>("run");
const clearMaskButton = $<HTMLButtonElement>("clear-mask");
const captionBox = $<HTMLTextAreaElement>("caption");
const planMeta = $<HTMLDivElement>("plan-meta");
const errorBox = $<HTMLDivElement>("error");
const historyStrip = $<HTMLDivElement>("history");
const imageCanvas = $<HTMLCanvasElement>("image-canvas");
const maskCanvas = $<HTMLCanvasElement>("mask-canvas");
const wSlider = $<HTMLInputElement>("w");
const wValue = $<HTMLSpanElement>("w-value");
const blurSlider = $<HTMLInputElement>("blur");
const blurValue = $<HTMLSpanElement>("blur-value");
const seedInput = $<HTMLInputElement>("seed");
const stepsInput = $<HTMLInputElement>("steps");
const brushInput = $<HTMLInputElement>("brush");
const toolSelect = $<HTMLSelectElement>("tool");

function showError(err: unknown): void {
  if (err instanceof ServiceError) {
    const stage = err.api.stage ? ` [stage: ${err.api.stage}]` : "";
    let hint = "";
    if (err.api.code === "not_found" && err.api.stage === "locate_target") {
      hint = " - nothing detected: draw a mask with the brush and run.";
    }
    store.update({ error: `${err.api.code}${stage}: ${err.api.message}${hint}` });
  } else {
    store.update({ error: String(err) });
  }
}

async function loadCurrentImage(ref: string): Promise<void> {
  const bytes = await service.fetchArtifact(ref);
  const blob = new Blob([bytes.buffer as ArrayBuffer], { type: "image/png" });
  imageBitmap = await createImageBitmap(blob);
  imageCanvas.width = imageBitmap.width;
  imageCanvas.height = imageBitmap.height;
  maskCanvas.width = imageBitmap.width;
  maskCanvas.height = imageBitmap.height;
  if (!mask || mask.width !== imageBitmap.width || mask.height !== imageBitmap.height) {
    mask = new MaskBuffer(imageBitmap.width, imageBitmap.height);
  }
  drawImage();
  drawMask();
}

function drawImage(): void {
  if (!imageBitmap) return;
  const ctx = imageCanvas.getContext("2d")!;
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(imageBitmap, 0, 0);
}

function drawMask(): void {
  if (!mask) return;
  const ctx = maskCanvas.getContext("2d")!;
  const img = ctx.createImageData(mask.width, mask.height);
  for (let i = 0; i < mask.data.length; i++) {
    const on = mask.data[i] === 1;
    img.data[i * 4] = 255;
    img.data[i * 4 + 1] = 40;
    img.data[i * 4 + 2] = 40;
    img.data[i * 4 + 3] = on ? 110 : 0;
  }
  ctx.putImageData(img, 0, 0);
}

/** Decode a mask artifact through the browser's PNG decoder. */
async function maskFromArtifact(ref: string): Promise<MaskBuffer> {
  const bytes = await service.fetchArtifact(ref);
  const blob = new Blob([bytes.buffer as ArrayBuffer], { type: "image/png" });
  const bitmap = await createImageBitmap(blob);
  const scratch = document.createElement("canvas");
  scratch.width = bitmap.width;
  scratch.height = bitmap.height;
  const ctx = scratch.getContext("2d")!;
  ctx.drawImage(bitmap, 0, 0);
  const rgba = ctx.getImageData(0, 0, bitmap.width, bitmap.height).data;
  const gray = new Uint8Array(bitmap.width * bitmap.height);
  for (let i = 0; i < gray.length; i++) {
    gray[i] = rgba[i * 4] ?? 0;
  }
  return MaskBuffer.fromGrayscale(bitmap.width, bitmap.height, gray);
}

// -- brush wiring ----------------------------------------------------------

let painting = false;
let last: { x: number; y: number } | null = null;

function canvasPos(ev: PointerEvent): { x: number; y: number } {
  const rect = maskCanvas.getBoundingClientRect();
  return {
    x: ((ev.clientX - rect.left) / rect.width) * maskCanvas.width,
    y: ((ev.clientY - rect.top) / rect.height) * maskCanvas.height,
  };
}

maskCanvas.addEventListener("pointerdown", (ev) => {
  if (!mask) return;
  painting = true;
  maskCanvas.setPointerCapture(ev.pointerId);
  const { controls } = store.get();
  const pos = canvasPos(ev);
  mask.stampDisc(pos.x, pos.y, controls.brushRadius,
                 controls.tool === "brush" ? 1 : 0);
  last = pos;
  store.update({ maskDirty: true });
  drawMask();
});

maskCanvas.addEventListener("pointermove", (ev) => {
  if (!painting || !mask || !last) return;
  const { controls } = store.get();
  const pos = canvasPos(ev);
  mask.strokeSegment(last.x, last.y, pos.x, pos.y, controls.brushRadius,
                     controls.tool === "brush" ? 1 : 0);
  last = pos;
  drawMask();
});

window.addEventListener("pointerup", () => {
  painting = false;
  last = null;
});

clearMaskButton.addEventListener("click", () => {
  mask?.clear();
  store.update({ maskDirty: true });
  drawMask();
});

// -- controls ----------------------------------------------------------------

wSlider.addEventListener("input", () => {
  store.updateControls({ preservationScale: Number(wSlider.value) });
  wValue.textContent = wSlider.value;
});
blurSlider.addEventListener("input", () => {
  store.updateControls({ blurRadius: Number(blurSlider.value) });
  blurValue.textContent = blurSlider.value;
});
seedInput.addEventListener("change", () => {
  store.updateControls({ seed: Number(seedInput.value) });
});
stepsInput.addEventListener("change", () => {
  store.updateControls({ steps: Number(stepsInput.value) });
});
brushInput.addEventListener("change", () => {
  store.updateControls({ brushRadius: Number(brushInput.value) });
});
toolSelect.addEventListener("change", () => {
  store.updateControls({ tool: toolSelect.value as "brush" | "eraser" });
});
captionBox.addEventListener("input", () => {
  store.update({ caption: captionBox.value });
});

// -- session flow ----------------------------------------------------------------

fileInput.addEventListener("change", async () => {
  const file = fileInput.files?.[0];
  if (!file) return;
  try {
    const bytes = new Uint8Array(await file.arrayBuffer());
    const created = await service.createSession(bytesToBase64(bytes));
    const session = await service.getSession(created.session_id);
    store.update({ currentRef: null, planRef: null, plan: null, error: null });
    store.setSession(session);
    await loadCurrentImage(latestResultRef(session));
  } catch (err) {
    showError(err);
  }
});

planButton.addEventListener("click", async () => {
  const ws = store.get();
  if (!ws.sessionId) return;
  try {
    store.update({ error: null });
    const res = await service.plan(ws.sessionId, instructionInput.value);
    store.adoptPlan(res.plan_ref, res.plan);
    mask = await maskFromArtifact(res.plan.mask_ref);
    store.update({ maskDirty: false });
    drawMask();
  } catch (err) {
    showError(err);
  }
});

runButton.addEventListener("click", async () => {
  const ws = store.get();
  if (!ws.sessionId || ws.busy) return;
  if (!ws.planRef && !ws.maskDirty) {
    store.update({ error: "plan an instruction or draw a mask first" });
    return;
  }
  store.update({ busy: true, error: null });
  try {
    const overrides: { mask_b64?: string; caption?: string } = {};
    if (ws.maskDirty && mask) {
      overrides.mask_b64 = bytesToBase64(
        encodeGrayPng(mask.width, mask.height, mask.toGrayscale()));
    }
    const caption = captionOverride(ws);
    if (caption) overrides.caption = caption;
    const req: Parameters<typeof service.runRound>[1] = {
      overrides,
      w: ws.controls.preservationScale,
      blur_radius: ws.controls.blurRadius,
      seed: ws.controls.seed,
      steps: ws.controls.steps,
    };
    if (ws.planRef) {
      req.plan_ref = ws.planRef;
    } else {
      // manual round: detection found nothing, the user drew the mask
      if (!mask || !ws.caption.trim()) {
        store.update({
          busy: false,
          error: "manual rounds need a drawn mask and a caption",
        });
        return;
      }
      req.plan = {
        edit_type: "local_edit",
        target_object: instructionInput.value.trim() || "manual region",
        mask_ref: "data:image/png;base64," + bytesToBase64(
          encodeGrayPng(mask.width, mask.height, mask.toGrayscale())),
        target_caption: ws.caption,
        confidence: 0,
      };
      delete overrides.mask_b64;
      delete overrides.caption;
    }
    const round = await service.runRound(ws.sessionId, req);
    const session = await service.getSession(ws.sessionId);
    store.setSession(session);
    if (round.status === "done" && round.result_ref) {
      store.update({ currentRef: round.result_ref });
      await loadCurrentImage(round.result_ref);
      mask?.clear();
      store.update({ maskDirty: false });
      drawMask();
    } else if (round.error) {
      const stage = round.error.stage ? ` [stage: ${round.error.stage}]` : "";
      store.update({ error: `round failed${stage}: ${round.error.message}` });
    }
  } catch (err) {
    showError(err);
  } finally {
    store.update({ busy: false });
  }
});

// -- rendering ----------------------------------------------------------------

function render(): void {
  const ws = store.get();
  runButton.disabled = ws.busy || !ws.sessionId;
  planButton.disabled = ws.busy || !ws.sessionId;
  runButton.textContent = ws.busy ? "Running..." : "Run round";
  errorBox.textContent = ws.error ?? "";
  errorBox.style.display = ws.error ? "block" : "none";
  if (document.activeElement !== captionBox) {
    captionBox.value = ws.caption;
  }
  if (ws.plan) {
    const low = ws.plan.low_confidence ? " (low confidence)" : "";
    planMeta.textContent =
      `${ws.plan.edit_type} | ${ws.plan.target_object} | ` +
      `detector ${ws.plan.confidence.toFixed(2)}${low}`;
  } else {
    planMeta.textContent = ws.sessionId
      ? "no plan yet" : "upload an image to start";
  }
  renderHistory();
}

function renderHistory(): void {
  const ws = store.get();
  historyStrip.replaceChildren();
  if (!ws.session) return;
  for (const round of ws.session.rounds) {
    const card = document.createElement("div");
    card.className = `round ${round.status}`;
    const caption = document.createElement("div");
    caption.className = "round-caption";
    const ov = Object.keys(round.overrides ?? {}).length
      ? ` + overrides(${Object.keys(round.overrides).join(",")})` : "";
    caption.textContent =
      `#${round.index} ${round.plan.edit_type}: ${round.plan.target_object}` +
      `${ov} [w=${round.w} blur=${round.blur_radius} seed=${round.seed}]` +
      (round.status === "failed" ? " FAILED" : "");
    card.appendChild(caption);
    const row = document.createElement("div");
    row.className = "round-images";
    for (const ref of [round.source_ref, round.result_ref]) {
      if (!ref) continue;
      const img = document.createElement("img");
      img.src = service.artifactUrl(ref);
      img.title = ref;
      row.appendChild(img);
    }
    card.appendChild(row);
    if (round.status === "done" && round.result_ref) {
      const promote = document.createElement("button");
      const isCurrent = ws.currentRef === round.result_ref;
      promote.textContent = isCurrent ? "current" : "promote";
      promote.disabled = isCurrent || ws.busy;
      promote.addEventListener("click", async () => {
        store.promote(round.result_ref!);
        await loadCurrentImage(round.result_ref!);
        mask?.clear();
        drawMask();
      });
      card.appendChild(promote);
    }
    historyStrip.appendChild(card);
  }
}

store.subscribe(render);
render();
