import { EditorController } from "./controller.js";
import { ServiceTransport } from "./transport.js";
import { EditorView } from "./ui.js";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");

const controller = new EditorController(new ServiceTransport());
const view = new EditorView(root, controller);
controller.events = {
  onScene: (s) => view.onScene(s),
  onFrame: (f) => view.onFrame(f),
  onToast: (m) => view.onToast(m),
  onJob: (j) => view.onJob(j),
};

void controller.load();
