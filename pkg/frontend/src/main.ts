import { SessionController } from "./controller.js";
import { ProtocolClient } from "./protocol.js";
import { ConsoleView } from "./view.js";

const params = new URLSearchParams(window.location.search);
const url = params.get("server") ?? "http://127.0.0.1:8765/";

const client = new ProtocolClient(url);
const ctrl = new SessionController(client);
new ConsoleView(document.getElementById("app")!, ctrl);
void ctrl.connect();
