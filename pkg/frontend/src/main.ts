import { ViewerApp } from "./viewer.js";

const canvas = document.getElementById("view") as HTMLCanvasElement;
const hud = document.getElementById("hud")!;
const banner = document.getElementById("banner")!;
const picker = document.getElementById("picker") as HTMLInputElement;

const app = new ViewerApp(canvas, hud, banner);
void app.start();

picker.addEventListener("change", () => {
  for (const file of picker.files ?? []) app.loadFile(file);
  picker.value = "";
});
