import { init } from "./app";

void init(document.getElementById("app")!);
