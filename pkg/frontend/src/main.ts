import { ApiClient } from "./api";
import { createWorkbench } from "./app";

/** Browser entry point: a connect bar plus the workbench. */

const DEFAULT_BASE = "http://127.0.0.1:8000";

function boot(): void {
  const root = document.getElementById("app");
  if (!root) return;

  const bar = document.createElement("div");
  bar.className = "connect-bar";
  const baseInput = document.createElement("input");
  baseInput.value = DEFAULT_BASE;
  baseInput.size = 32;
  const datasetSelect = document.createElement("select");
  datasetSelect.dataset.testid = "dataset-select";
  const connectBtn = document.createElement("button");
  connectBtn.textContent = "List datasets";
  const openBtn = document.createElement("button");
  openBtn.textContent = "Open dataset";

  const benchRoot = document.createElement("div");
  const bench = createWorkbench(benchRoot, baseInput.value);

  connectBtn.addEventListener("click", async () => {
    const api = new ApiClient(baseInput.value);
    try {
      const { datasets } = await api.listDatasets();
      datasetSelect.replaceChildren(
        ...datasets.map((id) => {
          const option = document.createElement("option");
          option.value = id;
          option.textContent = id;
          return option;
        }),
      );
    } catch (err) {
      alert(`failed to list datasets: ${err}`);
    }
  });

  openBtn.addEventListener("click", () => {
    if (datasetSelect.value) void bench.connect(datasetSelect.value);
  });

  bar.append("service: ", baseInput, connectBtn, datasetSelect, openBtn);
  root.append(bar, benchRoot);
}

boot();
