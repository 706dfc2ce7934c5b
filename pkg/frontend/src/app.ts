import { ApiClient } from "./api.js";
import { ChatController } from "./controller.js";

const api = new ApiClient("");
const controller = new ChatController(api);

const turnsEl = document.getElementById("turns") as HTMLDivElement;
const formEl = document.getElementById("composer") as HTMLFormElement;
const inputEl = document.getElementById("chat-input") as HTMLTextAreaElement;
const sendEl = document.getElementById("send") as HTMLButtonElement;
const uploadEl = document.getElementById("upload") as HTMLButtonElement;
const fileEl = document.getElementById("file-input") as HTMLInputElement;
const downloadEl = document.getElementById("download") as HTMLButtonElement;

function render(): void {
    turnsEl.replaceChildren();
    for (const turn of controller.turns) {
        const bubble = document.createElement("div");
        bubble.className = `turn ${turn.author}`;
        if (turn.pending) bubble.classList.add("pending");
        if (turn.error) bubble.classList.add("error");

        const text = document.createElement("p");
        text.textContent = turn.text;
        bubble.appendChild(text);

        if (turn.badge) {
            const badge = document.createElement("span");
            badge.className = "badge";
            badge.textContent = turn.badge;
            bubble.appendChild(badge);
        }
        turnsEl.appendChild(bubble);
    }
    turnsEl.scrollTop = turnsEl.scrollHeight;
    const busy = controller.pending;
    sendEl.disabled = busy || !inputEl.value.trim();
    uploadEl.disabled = busy;
    downloadEl.disabled = busy;
}

controller.onChange = render;

formEl.addEventListener("submit", (event) => {
    event.preventDefault();
    const text = inputEl.value;
    if (!controller.canSend(text)) return;
    inputEl.value = "";
    void controller.sendMessage(text);
});

inputEl.addEventListener("input", render);
inputEl.addEventListener("keydown", (event) => {
    if (event.key === "Enter" && !event.shiftKey) {
        event.preventDefault();
        formEl.requestSubmit();
    }
});

uploadEl.addEventListener("click", () => fileEl.click());

fileEl.addEventListener("change", () => {
    const file = fileEl.files?.[0];
    fileEl.value = "";
    if (!file) return;
    // Non-CSV extensions get a warning, but the server has the final say.
    if (!file.name.toLowerCase().endsWith(".csv")) {
        const proceed = window.confirm(
            `${file.name} does not look like a CSV file. Upload anyway?`,
        );
        if (!proceed) return;
    }
    void controller.uploadCsv(file, file.name);
});

downloadEl.addEventListener("click", async () => {
    const result = await controller.downloadCsv();
    if (!result) return;
    const blob = new Blob([result.bytes], { type: "text/csv" });
    const url = URL.createObjectURL(blob);
    const anchor = document.createElement("a");
    anchor.href = url;
    anchor.download = result.filename;
    anchor.click();
    URL.revokeObjectURL(url);
});

void controller.ensureSession().catch(() => {
    // Session creation is retried lazily on the first action.
});
render();
