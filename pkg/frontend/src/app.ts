// DOM glue: mounts the chat view against a running courserag service.

import { CourseRagClient } from "./api.js";
import { ChatView } from "./view.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function mountChatApp(root: HTMLElement, baseUrl: string, botId: string): ChatView {
  const view = new ChatView((token) => new CourseRagClient(baseUrl, token), botId);

  const tokenForm = el("form", "token-form");
  const tokenInput = el("input");
  tokenInput.type = "password";
  tokenInput.placeholder = "course access token";
  const tokenButton = el("button", "", "enter");
  tokenForm.append(tokenInput, tokenButton);

  const chatPane = el("section", "chat-pane");
  const courseRow = el("div", "course-row");
  const courseInput = el("input");
  courseInput.value = botId;
  const courseButton = el("button", "", "switch course");
  courseRow.append(courseInput, courseButton);

  const transcript = el("pre", "transcript");
  const sourcesPanel = el("aside", "sources");
  const body = el("div", "body-row");
  body.append(transcript, sourcesPanel);

  const messageForm = el("form", "message-form");
  const messageInput = el("input");
  messageInput.placeholder = "ask about the course material";
  const streamToggle = el("input");
  streamToggle.type = "checkbox";
  streamToggle.checked = true;
  const sendButton = el("button", "", "send");
  messageForm.append(messageInput, streamToggle, sendButton);

  chatPane.append(courseRow, body, messageForm);
  root.append(tokenForm, chatPane);

  const render = (): void => {
    tokenForm.style.display = view.state === "token-entry" ? "" : "none";
    chatPane.style.display = view.state === "ready" ? "" : "none";
    sendButton.disabled = !view.canSend;
    messageInput.disabled = !view.canSend;
    transcript.textContent = view.renderTranscript().join("\n");
    sourcesPanel.replaceChildren(
      el("h3", "", "sources"),
      ...view.currentSources().map((src) => {
        const card = el("div", "source-card");
        card.append(
          el("strong", "", `${src.title} #${src.seq}`),
          el("small", "", ` chars ${src.char_start}-${src.char_end}`),
          el("p", "", src.excerpt),
        );
        return card;
      }),
    );
    transcript.scrollTop = transcript.scrollHeight;
  };
  view.onChange = render;

  tokenForm.addEventListener("submit", (ev) => {
    ev.preventDefault();
    if (tokenInput.value.trim()) view.signIn(tokenInput.value.trim());
    tokenInput.value = "";
  });
  courseButton.addEventListener("click", (ev) => {
    ev.preventDefault();
    if (courseInput.value.trim()) view.switchCourse(courseInput.value.trim());
  });
  messageForm.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const message = messageInput.value;
    messageInput.value = "";
    void view.send(message, { stream: streamToggle.checked });
  });

  render();
  return view;
}

const root = typeof document !== "undefined" ? document.getElementById("app") : null;
if (root) {
  const params = new URLSearchParams(window.location.search);
  mountChatApp(root, params.get("api") ?? "", params.get("bot") ?? "course");
}
