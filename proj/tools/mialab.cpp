#include <cstdio>
int main() { std::puts("mialab: under construction"); return 1; }
